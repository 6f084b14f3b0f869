"""Simulated world: joint-servo stepping, scene geometry, capsule collision
checks, and the synthetic camera feature pipeline.

Camera features are 16-vectors with a fixed slot layout (see FEATURE_DIM and
the FEAT_* index constants). Positions are meters, world frame; the camera
convention is +z optical axis, +x image-right, +y image-down, with (u, v)
normalized so the frame edges sit at +-1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .arm import RobotModel, fk_batch, fk_chain

# feature slot layout
FEATURE_DIM = 16
FEAT_TARGET_U = 0
FEAT_TARGET_V = 1
FEAT_TARGET_DEPTH = 2
FEAT_TARGET_RADIUS = 3
FEAT_TARGET_VIS = 4
FEAT_OBST_U = 5
FEAT_OBST_V = 6
FEAT_OBST_DEPTH = 7
FEAT_OBST_VIS = 8
FEAT_FIDUCIALS = slice(9, 15)   # three landmarks, (u, v) each
FEAT_FID_DEPTH = 15             # depth of the first landmark

VIS_MARGIN = 1.5                # synthetic detector keeps track slightly past the frame edge
MIN_DEPTH = 0.02                # meters in front of the optical center
DEPTH_SCALE = 1.0               # meters per feature unit


@dataclass(frozen=True)
class CameraIntrinsics:
    h_fov: float = 1.2          # radians
    v_fov: float = 0.9
    principal: tuple[float, float] = (0.0, 0.0)
    resolution: tuple[int, int] = (640, 480)

    def __post_init__(self):
        if not 0 < self.h_fov < np.pi or not 0 < self.v_fov < np.pi:
            raise ValueError("fields of view must be in (0, pi)")


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    extents: np.ndarray         # full extents, meters

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "extents", np.asarray(self.extents, dtype=float))
        if np.any(self.extents <= 0):
            raise ValueError("box extents must be > 0")

    @property
    def half(self) -> np.ndarray:
        return self.extents / 2.0

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return self.center + signs * self.half


@dataclass(frozen=True)
class Scene:
    target_pos: np.ndarray
    target_radius: float
    obstacle: Box
    obstacle_present: bool
    workspace: Box
    fiducials: np.ndarray       # (3, 3) fixed landmarks
    intrinsics: CameraIntrinsics = CameraIntrinsics()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "target_pos", np.asarray(self.target_pos, dtype=float))
        object.__setattr__(self, "fiducials", np.asarray(self.fiducials, dtype=float))
        lo = self.workspace.center - self.workspace.half
        hi = self.workspace.center + self.workspace.half
        if np.any(self.target_pos < lo) or np.any(self.target_pos > hi):
            raise ValueError("target must lie inside the workspace box")

    def without_obstacle(self) -> "Scene":
        return replace(self, obstacle_present=False)


@dataclass(frozen=True)
class ServoModel:
    """Per-joint second-order tracking model standing in for the torque loop."""

    natural_frequency: float = 25.0   # rad/s
    damping_ratio: float = 1.0
    rate: float = 200.0               # Hz
    actuation_noise_sigma: float = 0.0  # radians, on the commanded position

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be > 0")
        if self.natural_frequency <= 0:
            raise ValueError("natural_frequency must be > 0")

    @property
    def dt(self) -> float:
        return 1.0 / self.rate


@dataclass
class SimState:
    q: np.ndarray
    qdot: np.ndarray
    time: float = 0.0
    collided: bool = False

    @staticmethod
    def at_rest(q: np.ndarray) -> "SimState":
        q = np.asarray(q, dtype=float).copy()
        return SimState(q=q, qdot=np.zeros_like(q), time=0.0, collided=False)


def step(
    state: SimState,
    q_cmd: np.ndarray,
    servo: ServoModel,
    model: RobotModel,
    scene: Scene,
    rng: np.random.Generator | None = None,
) -> SimState:
    """Advance one servo tick with semi-implicit integration.

    qddot = w^2 (q_cmd - q) - 2 zeta w qdot, with optional Gaussian noise on
    the commanded position; joint and velocity limits enforced; the collided
    flag latches once set.
    """
    dt = servo.dt
    w = servo.natural_frequency
    cmd = np.asarray(q_cmd, dtype=float)
    if servo.actuation_noise_sigma > 0.0:
        if rng is None:
            raise ValueError("actuation noise requires an rng")
        cmd = cmd + rng.normal(0.0, servo.actuation_noise_sigma, size=cmd.shape)
    qddot = w * w * (cmd - state.q) - 2.0 * servo.damping_ratio * w * state.qdot
    qdot = np.clip(state.qdot + dt * qddot, -model.velocity_limits, model.velocity_limits)
    q = state.q + dt * qdot
    clamped = model.clamp(q)
    at_limit = clamped != q
    if np.any(at_limit):
        qdot = np.where(at_limit, 0.0, qdot)
        q = clamped
    collided = state.collided or in_collision(model, q, scene, margin=0.0)
    return SimState(q=q, qdot=qdot, time=state.time + dt, collided=collided)


# --- collision geometry ------------------------------------------------------

def link_capsules(model: RobotModel, q: np.ndarray):
    """World-frame capsule endpoints at q: (p0 (n,3), p1 (n,3), radii (n,), link index (n,))."""
    link_R, link_p, _, _, _ = fk_chain(model, q)
    R = link_R[model._cap_link]
    p = link_p[model._cap_link]
    w0 = p + np.einsum("nij,nj->ni", R, model._cap_p0)
    w1 = p + np.einsum("nij,nj->ni", R, model._cap_p1)
    return w0, w1, model._cap_r, model._cap_link


def segment_box_distance(p0: np.ndarray, p1: np.ndarray, box: Box) -> np.ndarray:
    """Euclidean distance from segment(s) to an axis-aligned box (0 inside).

    Golden-section minimization of the convex point-to-box distance along the
    segment; supports (..., 3) batches. Accurate to ~1e-9 of segment length.
    """
    a = np.asarray(p0, dtype=float) - box.center
    d = np.asarray(p1, dtype=float) - box.center - a
    half = box.half

    def f(t):
        p = a + t[..., None] * d
        out = np.abs(p) - half
        np.maximum(out, 0.0, out=out)
        return np.einsum("...i,...i->...", out, out)

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    lo = np.zeros(a.shape[:-1])
    hi = np.ones(a.shape[:-1])
    for _ in range(44):
        c = hi - invphi * (hi - lo)
        e = lo + invphi * (hi - lo)
        shrink_right = f(c) < f(e)
        hi = np.where(shrink_right, e, hi)
        lo = np.where(shrink_right, lo, c)
    return np.sqrt(f((lo + hi) / 2.0))


def capsule_box_distance(p0, p1, radius: float, box: Box) -> float:
    """Signed clearance between a capsule and a box; negative means penetration."""
    return float(segment_box_distance(np.asarray(p0), np.asarray(p1), box)) - radius


def capsule_floor_distance(p0, p1, radius: float) -> float:
    """Signed clearance above the z=0 floor plane."""
    return float(min(p0[2], p1[2])) - radius


def in_collision(model: RobotModel, q: np.ndarray, scene: Scene, margin: float = 0.0) -> bool:
    """True iff any link capsule is within margin of the obstacle box or the
    floor plane. The base-column link (index 0) is exempt from the floor
    check since it is structurally mounted there. Self-collision is out of
    scope."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    w0, w1, radii, links = link_capsules(model, q)
    floor_mask = links > 0
    floor_clear = np.minimum(w0[floor_mask, 2], w1[floor_mask, 2]) - radii[floor_mask]
    if np.any(floor_clear < margin):
        return True
    if scene.obstacle_present:
        dist = segment_box_distance(w0, w1, scene.obstacle) - radii
        if np.any(dist < margin):
            return True
    return False


def in_collision_batch(model: RobotModel, Q: np.ndarray, scene: Scene, margin: float = 0.0) -> np.ndarray:
    """Vectorized in_collision over (N, 6) configurations."""
    Q = np.asarray(Q, dtype=float)
    link_R, link_p, _, _ = fk_batch(model, Q)
    R = link_R[:, model._cap_link]
    p = link_p[:, model._cap_link]
    w0 = p + np.einsum("nkij,kj->nki", R, model._cap_p0)
    w1 = p + np.einsum("nkij,kj->nki", R, model._cap_p1)
    radii = model._cap_r
    floor_mask = model._cap_link > 0
    floor_clear = np.minimum(w0[:, floor_mask, 2], w1[:, floor_mask, 2]) - radii[floor_mask]
    hit = np.any(floor_clear < margin, axis=1)
    if scene.obstacle_present:
        dist = segment_box_distance(w0, w1, scene.obstacle) - radii
        hit |= np.any(dist < margin, axis=1)
    return hit


def segment_collision_free(
    model: RobotModel,
    scene: Scene,
    qa: np.ndarray,
    qb: np.ndarray,
    margin: float,
    resolution: float = 0.01,
) -> bool:
    """Dense joint-space interpolation check between two configurations."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    n = int(np.ceil(np.max(np.abs(qb - qa)) / resolution)) + 2
    ts = np.linspace(0.0, 1.0, n)
    Q = qa + ts[:, None] * (qb - qa)
    return not bool(np.any(in_collision_batch(model, Q, scene, margin)))


# --- synthetic camera --------------------------------------------------------

def _project(points_cam: np.ndarray, intr: CameraIntrinsics):
    """(u, v, depth, visible) for camera-frame points (..., 3)."""
    z = points_cam[..., 2]
    safe_z = np.where(np.abs(z) < 1e-12, 1e-12, z)
    u = points_cam[..., 0] / safe_z / np.tan(intr.h_fov / 2.0) + intr.principal[0]
    v = points_cam[..., 1] / safe_z / np.tan(intr.v_fov / 2.0) + intr.principal[1]
    visible = (z > MIN_DEPTH) & (np.abs(u) <= VIS_MARGIN) & (np.abs(v) <= VIS_MARGIN)
    return u, v, z / DEPTH_SCALE, visible


def render_features(
    scene: Scene,
    model: RobotModel,
    q: np.ndarray,
    intrinsics: CameraIntrinsics | None = None,
) -> np.ndarray:
    """Project the scene into the camera at FK(q); deterministic.

    Invisible entities leave their slots zeroed with visibility 0.
    """
    intr = intrinsics if intrinsics is not None else scene.intrinsics
    _, _, _, cam_R, cam_p = fk_chain(model, q)
    feat = np.zeros(FEATURE_DIM)

    tgt_cam = cam_R.T @ (scene.target_pos - cam_p)
    u, v, depth, vis = _project(tgt_cam, intr)
    if vis:
        feat[FEAT_TARGET_U] = u
        feat[FEAT_TARGET_V] = v
        feat[FEAT_TARGET_DEPTH] = depth
        feat[FEAT_TARGET_RADIUS] = scene.target_radius / max(tgt_cam[2], MIN_DEPTH) / np.tan(intr.h_fov / 2.0)
        feat[FEAT_TARGET_VIS] = 1.0

    if scene.obstacle_present:
        corners_cam = (scene.obstacle.corners() - cam_p) @ cam_R
        nearest = corners_cam[np.argmin(np.linalg.norm(corners_cam, axis=1))]
        u, v, depth, vis = _project(nearest, intr)
        if vis:
            feat[FEAT_OBST_U] = u
            feat[FEAT_OBST_V] = v
            feat[FEAT_OBST_DEPTH] = depth
            feat[FEAT_OBST_VIS] = 1.0

    fids_cam = (scene.fiducials - cam_p) @ cam_R
    u, v, depth, vis = _project(fids_cam, intr)
    for i in range(3):
        if vis[i]:
            feat[9 + 2 * i] = u[i]
            feat[10 + 2 * i] = v[i]
    if vis[0]:
        feat[FEAT_FID_DEPTH] = depth[0]
    return feat


def goal_feature(
    scene: Scene,
    model: RobotModel,
    q_goal: np.ndarray,
    intrinsics: CameraIntrinsics | None = None,
) -> np.ndarray:
    """Feature the camera would record at the goal configuration."""
    return render_features(scene, model, q_goal, intrinsics)


# --- scene config I/O -----------------------------------------------------------

def scene_from_dict(cfg: dict) -> Scene:
    intr_cfg = cfg.get("intrinsics", {})
    intr = CameraIntrinsics(
        h_fov=float(intr_cfg.get("h_fov", 1.2)),
        v_fov=float(intr_cfg.get("v_fov", 0.9)),
        principal=tuple(intr_cfg.get("principal", (0.0, 0.0))),
        resolution=tuple(intr_cfg.get("resolution", (640, 480))),
    )
    ws = cfg["workspace"]
    return Scene(
        target_pos=cfg["target"]["position"],
        target_radius=float(cfg["target"]["radius"]),
        obstacle=Box(center=cfg["obstacle"]["center"], extents=cfg["obstacle"]["extents"]),
        obstacle_present=bool(cfg["obstacle"].get("present", True)),
        workspace=Box(center=ws["center"], extents=ws["extents"]),
        fiducials=cfg["fiducials"],
        intrinsics=intr,
        seed=int(cfg.get("seed", 0)),
    )


def scene_to_dict(scene: Scene) -> dict:
    return {
        "target": {"position": scene.target_pos.tolist(), "radius": scene.target_radius},
        "obstacle": {
            "center": scene.obstacle.center.tolist(),
            "extents": scene.obstacle.extents.tolist(),
            "present": scene.obstacle_present,
        },
        "workspace": {
            "center": scene.workspace.center.tolist(),
            "extents": scene.workspace.extents.tolist(),
        },
        "fiducials": scene.fiducials.tolist(),
        "intrinsics": {
            "h_fov": scene.intrinsics.h_fov,
            "v_fov": scene.intrinsics.v_fov,
            "principal": list(scene.intrinsics.principal),
            "resolution": list(scene.intrinsics.resolution),
        },
        "seed": scene.seed,
    }


def load_scene(path: str | Path) -> Scene:
    with open(path) as f:
        return scene_from_dict(json.load(f))


def default_scene(obstacle: bool = False) -> Scene:
    name = "scene_obstacle.json" if obstacle else "scene_free.json"
    text = resources.files("cinearm").joinpath(f"configs/{name}").read_text()
    return scene_from_dict(json.loads(text))


class SimWorld:
    """Owns one simulation instance: state, servo, scene, seeded noise stream.

    Single writer; snapshots are safe to read from observers.
    """

    def __init__(
        self,
        model: RobotModel,
        scene: Scene,
        servo: ServoModel = ServoModel(),
        seed: int | None = None,
    ):
        self.model = model
        self.scene = scene
        self.servo = servo
        self.rng = np.random.default_rng(scene.seed if seed is None else seed)
        self.state = SimState.at_rest(np.zeros(6))

    def reset(self, q0: np.ndarray) -> SimState:
        self.state = SimState.at_rest(q0)
        return self.state

    def step(self, q_cmd: np.ndarray) -> SimState:
        self.state = step(self.state, q_cmd, self.servo, self.model, self.scene, rng=self.rng)
        return self.state

    def features(self) -> np.ndarray:
        return render_features(self.scene, self.model, self.state.q)
