"""Receding-horizon deployment controller for trained policies.

Buffers the last S synchronized (feature, joint) observations; once full, a
forward pass with z = 0 predicts a chunk, the k-th step is clamped to a
per-joint deviation budget around the current state, and an EMA filter
smooths the command stream at the control rate.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .policy import PolicyParams, policy_forward


@dataclass(frozen=True)
class DeployConfig:
    lookahead_k: int = 1
    delta_max: float = 0.2      # rad, per joint, against the current state
    ema_alpha: float = 0.3
    rate_hz: float = 10.0

    def __post_init__(self):
        if self.lookahead_k < 1:
            raise ValueError("lookahead_k must be >= 1")
        if not 0 < self.ema_alpha <= 1:
            raise ValueError("ema_alpha must be in (0, 1]")


class DeployStatus(enum.Enum):
    WARMUP = "WARMUP"    # buffer not full yet: no command
    ACTIVE = "ACTIVE"
    HOLD = "HOLD"        # stale observations: hold position, flag the rollout


@dataclass
class DeployDecision:
    command: np.ndarray | None
    status: DeployStatus
    raw_target: np.ndarray | None = None
    clamped_target: np.ndarray | None = None


class DeployController:
    """Single-writer controller; one instance per rollout."""

    def __init__(self, params: PolicyParams, goal: np.ndarray, config: DeployConfig = DeployConfig()):
        self.params = params
        self.goal = np.asarray(goal, dtype=float)
        self.config = config
        S = params.config.obs_horizon
        if config.lookahead_k > params.config.pred_horizon:
            raise ValueError("lookahead exceeds the prediction horizon")
        self._buffer: deque = deque(maxlen=S)
        self._prev_cmd: np.ndarray | None = None
        self._last_ts: float | None = None
        self.dropout_flagged = False

    def observe(self, feature: np.ndarray, q: np.ndarray, timestamp: float) -> DeployDecision:
        """Feed one synchronized observation; returns the control decision."""
        q = np.asarray(q, dtype=float)
        if self._last_ts is not None and timestamp - self._last_ts > 2.0 / self.config.rate_hz:
            # perception dropout: hold position, flag, restart the buffer
            self.dropout_flagged = True
            self._buffer.clear()
            self._last_ts = timestamp
            hold = self._prev_cmd if self._prev_cmd is not None else q.copy()
            return DeployDecision(command=hold.copy(), status=DeployStatus.HOLD)
        self._last_ts = timestamp
        self._buffer.append((np.asarray(feature, dtype=float).copy(), q.copy()))
        S = self.params.config.obs_horizon
        if len(self._buffer) < S:
            return DeployDecision(command=None, status=DeployStatus.WARMUP)

        feats = np.stack([f for f, _ in self._buffer])[None]
        joints = np.stack([j for _, j in self._buffer])[None]
        z = np.zeros((1, self.params.config.d_z))
        chunk = policy_forward(self.params, feats, joints, self.goal[None], z).data[0]
        raw = chunk[self.config.lookahead_k - 1].copy()
        if self.params.config.incremental:
            raw = q + raw
        clamped = np.clip(raw, q - self.config.delta_max, q + self.config.delta_max)
        prev = self._prev_cmd if self._prev_cmd is not None else q.copy()
        cmd = self.config.ema_alpha * clamped + (1.0 - self.config.ema_alpha) * prev
        self._prev_cmd = cmd
        return DeployDecision(
            command=cmd.copy(),
            status=DeployStatus.ACTIVE,
            raw_target=raw,
            clamped_target=clamped.copy(),
        )

    @property
    def last_command(self) -> np.ndarray | None:
        return None if self._prev_cmd is None else self._prev_cmd.copy()
