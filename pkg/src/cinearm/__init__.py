"""Desk-scale cinema camera arm: simulation, control, planning, and imitation learning."""

__version__ = "0.1.0"
