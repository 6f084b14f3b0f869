"""6-DOF serial arm model: structure, forward kinematics, Jacobian, calibration.

The arm is described by a config file (see ``configs/arm_default.json``):
six revolute joints, each with a fixed parent-to-joint transform and a unit
rotation axis, per-link collision capsules, joint/velocity limits, and a
camera mount on the last link. Joint configurations are plain float64
(6,) arrays in radians.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import (
    Transform,
    quat_from_matrix,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
    rotvec_to_quat,
    skew,
)

N_JOINTS = 6


@dataclass(frozen=True)
class Pose:
    """Position (m) + unit quaternion (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", quat_normalize(self.orientation))

    def as_transform(self) -> Transform:
        return Transform(pos=self.position, quat=self.orientation)

    @staticmethod
    def from_transform(t: Transform) -> "Pose":
        return Pose(position=t.pos, orientation=t.quat)


@dataclass(frozen=True)
class Capsule:
    """Segment p0-p1 with radius, all meters."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))
        if self.radius <= 0.0:
            raise ValueError("capsule radius must be > 0")


@dataclass(frozen=True)
class JointSpec:
    axis: np.ndarray          # unit rotation axis in the joint frame
    origin_xyz: np.ndarray    # fixed translation from parent link frame
    origin_rpy: np.ndarray    # fixed rotation (roll-pitch-yaw) from parent
    limit: tuple[float, float]
    velocity_limit: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ValueError("joint axis must be nonzero")
        object.__setattr__(self, "axis", axis / n)
        object.__setattr__(self, "origin_xyz", np.asarray(self.origin_xyz, dtype=float))
        object.__setattr__(self, "origin_rpy", np.asarray(self.origin_rpy, dtype=float))
        if not self.limit[0] < self.limit[1]:
            raise ValueError("joint limit min must be < max")


def _rpy_matrix(rpy: np.ndarray) -> np.ndarray:
    r, p, y = rpy
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx


class RobotModel:
    """Immutable kinematic model; precomputes per-joint tables for fast FK."""

    def __init__(
        self,
        joints: list[JointSpec],
        link_capsules: list[list[Capsule]],
        camera_mount: Transform,
        reach: float,
        name: str = "arm",
    ):
        if len(joints) != N_JOINTS:
            raise ValueError(f"expected {N_JOINTS} joints, got {len(joints)}")
        if len(link_capsules) != N_JOINTS:
            raise ValueError("link_capsules must have one (possibly empty) list per link")
        self.name = name
        self.joints = list(joints)
        self.link_capsules = [list(c) for c in link_capsules]
        self.camera_mount = camera_mount
        self.reach = float(reach)

        self.joint_limits = np.array([j.limit for j in joints])          # (6, 2)
        self.velocity_limits = np.array([j.velocity_limit for j in joints])

        # FK tables: fixed rotation, translation, axis skews per joint
        self._t = np.stack([j.origin_xyz for j in joints])               # (6, 3)
        self._Rfix = np.stack([_rpy_matrix(j.origin_rpy) for j in joints])
        self._axes = np.stack([j.axis for j in joints])                  # (6, 3)
        self._K = np.stack([skew(j.axis) for j in joints])
        self._K2 = np.stack([skew(j.axis) @ skew(j.axis) for j in joints])
        self._cam_R = quat_to_matrix(camera_mount.quat)
        self._cam_p = camera_mount.pos
        # capsule endpoints grouped per link for batch transforms
        self._cap_link = np.array(
            [i for i, caps in enumerate(link_capsules) for _ in caps], dtype=int
        )
        self._cap_p0 = (
            np.stack([c.p0 for caps in link_capsules for c in caps])
            if len(self._cap_link) else np.zeros((0, 3))
        )
        self._cap_p1 = (
            np.stack([c.p1 for caps in link_capsules for c in caps])
            if len(self._cap_link) else np.zeros((0, 3))
        )
        self._cap_r = np.array([c.radius for caps in link_capsules for c in caps])

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.joint_limits[:, 0], self.joint_limits[:, 1])

    def within_limits(self, q: np.ndarray, tol: float = 0.0) -> bool:
        return bool(
            np.all(q >= self.joint_limits[:, 0] - tol)
            and np.all(q <= self.joint_limits[:, 1] + tol)
        )


def _require_finite(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape != (N_JOINTS,):
        raise ValueError(f"joint config must have {N_JOINTS} entries, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("joint config contains non-finite entries")
    return q


def fk_chain(model: RobotModel, q: np.ndarray):
    """Full kinematic pass.

    Returns (link_R (6,3,3), link_p (6,3), joint_axes_world (6,3),
    cam_R (3,3), cam_p (3,)). link frame i is the joint-i frame after the
    joint rotation; joint_axes_world[i] is joint i's rotation axis in world.
    """
    q = _require_finite(q)
    link_R = np.empty((N_JOINTS, 3, 3))
    link_p = np.empty((N_JOINTS, 3))
    axes_w = np.empty((N_JOINTS, 3))
    R = np.eye(3)
    p = np.zeros(3)
    s, c1 = np.sin(q), 1.0 - np.cos(q)
    I3 = np.eye(3)
    for i in range(N_JOINTS):
        p = p + R @ model._t[i]
        R_pre = R @ model._Rfix[i]
        axes_w[i] = R_pre @ model._axes[i]
        Rj = I3 + s[i] * model._K[i] + c1[i] * model._K2[i]
        R = R_pre @ Rj
        link_R[i] = R
        link_p[i] = p
    cam_R = R @ model._cam_R
    cam_p = p + R @ model._cam_p
    return link_R, link_p, axes_w, cam_R, cam_p


def forward_kinematics(model: RobotModel, q: np.ndarray) -> tuple[Pose, list[Pose]]:
    """Camera-frame pose and per-link poses at q. Deterministic, pure."""
    link_R, link_p, _, cam_R, cam_p = fk_chain(model, q)
    ee = Pose(position=cam_p, orientation=quat_from_matrix(cam_R))
    links = [
        Pose(position=link_p[i], orientation=quat_from_matrix(link_R[i]))
        for i in range(N_JOINTS)
    ]
    return ee, links


def fk_camera(model: RobotModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fast path: camera rotation matrix and position only."""
    _, _, _, cam_R, cam_p = fk_chain(model, q)
    return cam_R, cam_p


def fk_batch(model: RobotModel, Q: np.ndarray):
    """Vectorized FK over N configurations.

    Returns (link_R (N,6,3,3), link_p (N,6,3), cam_R (N,3,3), cam_p (N,3)).
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != N_JOINTS:
        raise ValueError("expected (N, 6) joint array")
    n = Q.shape[0]
    link_R = np.empty((n, N_JOINTS, 3, 3))
    link_p = np.empty((n, N_JOINTS, 3))
    R = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    p = np.zeros((n, 3))
    s, c1 = np.sin(Q), 1.0 - np.cos(Q)
    I3 = np.eye(3)
    for i in range(N_JOINTS):
        p = p + np.einsum("nij,j->ni", R, model._t[i])
        R = R @ model._Rfix[i]
        Rj = I3 + s[:, i, None, None] * model._K[i] + c1[:, i, None, None] * model._K2[i]
        R = R @ Rj
        link_R[:, i] = R
        link_p[:, i] = p
    cam_R = R @ model._cam_R
    cam_p = p + np.einsum("nij,j->ni", R, model._cam_p)
    return link_R, link_p, cam_R, cam_p


def jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian of the camera frame: rows 0-2 linear, 3-5 angular."""
    _, link_p, axes_w, _, cam_p = fk_chain(model, q)
    J = np.empty((6, N_JOINTS))
    J[:3] = np.cross(axes_w, cam_p - link_p).T
    J[3:] = axes_w.T
    return J


# --- differential wrist -----------------------------------------------------

def wrist_motor_to_joint(m5: float, m6: float) -> tuple[float, float]:
    """Two-motor differential: common mode is pitch, differential mode is roll."""
    return (m5 + m6) / 2.0, (m5 - m6) / 2.0


def wrist_joint_to_motor(pitch: float, roll: float) -> tuple[float, float]:
    return pitch + roll, pitch - roll


WRIST_MATRIX = np.array([[0.5, 0.5], [0.5, -0.5]])  # det = -1/2


# --- homing calibration ------------------------------------------------------

@dataclass(frozen=True)
class HomeOffsets:
    """Raw incremental-encoder readings recorded at the canonical upright pose."""

    offsets: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINTS))

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=float)
        if off.shape != (N_JOINTS,) or not np.all(np.isfinite(off)):
            raise ValueError("offsets must be a finite 6-vector")
        object.__setattr__(self, "offsets", off)


def record_home(raw_upright: np.ndarray) -> HomeOffsets:
    return HomeOffsets(offsets=np.asarray(raw_upright, dtype=float))


def apply_home_offsets(
    model: RobotModel, raw: np.ndarray, offsets: HomeOffsets
) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Map raw encoder readings to kinematic coordinates.

    Subtracts the homing offsets, then converts the two wrist motor channels
    to pitch/roll. Out-of-limit results are reported as violations, never
    clamped, so callers decide how to react.
    """
    raw = _require_finite(raw)
    rel = raw - offsets.offsets
    q = rel.copy()
    q[4], q[5] = wrist_motor_to_joint(rel[4], rel[5])
    return q, check_joint_limits(model, q)


def unapply_home_offsets(model: RobotModel, q: np.ndarray, offsets: HomeOffsets) -> np.ndarray:
    """Inverse of apply_home_offsets (kinematic coordinates -> raw readings)."""
    q = _require_finite(q)
    rel = q.copy()
    rel[4], rel[5] = wrist_joint_to_motor(q[4], q[5])
    return rel + offsets.offsets


def check_joint_limits(model: RobotModel, q: np.ndarray) -> list[tuple[int, float]]:
    """Violations as (joint index, excess radians beyond the bound)."""
    q = _require_finite(q)
    out = []
    for i in range(N_JOINTS):
        lo, hi = model.joint_limits[i]
        if q[i] < lo:
            out.append((i, lo - q[i]))
        elif q[i] > hi:
            out.append((i, q[i] - hi))
    return out


# --- config I/O ---------------------------------------------------------------

def robot_model_from_dict(cfg: dict) -> RobotModel:
    joints = [
        JointSpec(
            axis=j["axis"],
            origin_xyz=j["origin_xyz"],
            origin_rpy=j.get("origin_rpy", [0.0, 0.0, 0.0]),
            limit=(float(j["limit"][0]), float(j["limit"][1])),
            velocity_limit=float(j["velocity_limit"]),
        )
        for j in cfg["joints"]
    ]
    caps = [
        [Capsule(p0=c["p0"], p1=c["p1"], radius=float(c["radius"])) for c in link]
        for link in cfg["link_capsules"]
    ]
    mount_cfg = cfg.get("camera_mount", {})
    mount = Transform(
        pos=np.asarray(mount_cfg.get("xyz", [0.0, 0.0, 0.0]), dtype=float),
        quat=rotvec_to_quat(np.asarray(mount_cfg.get("rotvec", [0.0, 0.0, 0.0]), dtype=float)),
    )
    return RobotModel(
        joints=joints,
        link_capsules=caps,
        camera_mount=mount,
        reach=float(cfg["reach"]),
        name=cfg.get("name", "arm"),
    )


def load_robot_model(path: str | Path) -> RobotModel:
    with open(path) as f:
        return robot_model_from_dict(json.load(f))


def default_robot_model() -> RobotModel:
    text = resources.files("cinearm").joinpath("configs/arm_default.json").read_text()
    return robot_model_from_dict(json.loads(text))


def max_reach_estimate(model: RobotModel, points_per_joint: int = 5, extra_random: int = 2000,
                       seed: int = 0) -> float:
    """Numerical workspace bound: max camera distance over a joint-limit grid
    plus random in-limit samples."""
    axes = [
        np.linspace(lo, hi, points_per_joint)
        for lo, hi in model.joint_limits
    ]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, N_JOINTS)
    rng = np.random.default_rng(seed)
    rand = rng.uniform(model.joint_limits[:, 0], model.joint_limits[:, 1],
                       size=(extra_random, N_JOINTS))
    _, _, _, cam_p = fk_batch(model, np.vstack([grid, rand]))
    return float(np.max(np.linalg.norm(cam_p, axis=1)))


def verify_model(model: RobotModel, reach_rtol: float = 0.02) -> None:
    """Check structural invariants; raises ValueError on failure."""
    if np.any(model._cap_r <= 0):
        raise ValueError("all capsule radii must be > 0")
    est = max_reach_estimate(model)
    if abs(est - model.reach) > reach_rtol * model.reach:
        raise ValueError(
            f"configured reach {model.reach:.3f} m differs from sampled max "
            f"{est:.3f} m by more than {reach_rtol:.0%}"
        )
