"""Evaluation metrics: repeatability, tracking RMSE, visual alignment,
success, Cartesian jerk, framing error, subject retention rate.

All metrics are pure functions of recorded trial data.
"""
from __future__ import annotations

import numpy as np

from .arm import RobotModel, fk_batch
from .world import (
    CameraIntrinsics,
    FEAT_TARGET_U,
    FEAT_TARGET_V,
    FEAT_TARGET_VIS,
)


def repeatability(endpoints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-waypoint mean deviation from the centroid.

    endpoints: (K runs, W waypoints, 3). Returns (mean_dev (W,), max_dev (W,)),
    meters. K must be at least 2.
    """
    endpoints = np.asarray(endpoints, dtype=float)
    if endpoints.ndim != 3 or endpoints.shape[0] < 2:
        raise ValueError("need K >= 2 runs of W waypoints")
    centroid = endpoints.mean(axis=0)
    dev = np.linalg.norm(endpoints - centroid, axis=2)
    return dev.mean(axis=0), dev.max(axis=0)


def tracking_rmse(
    ref_times: np.ndarray,
    ref_positions: np.ndarray,
    exec_times: np.ndarray,
    exec_positions: np.ndarray,
) -> tuple[float, float]:
    """(RMSE, max error) of executed vs reference Cartesian paths, meters.

    The executed path is linearly interpolated onto the reference timestamps
    over the overlapping time support.
    """
    ref_times = np.asarray(ref_times, dtype=float)
    exec_times = np.asarray(exec_times, dtype=float)
    lo = max(ref_times[0], exec_times[0])
    hi = min(ref_times[-1], exec_times[-1])
    if hi <= lo:
        raise ValueError("reference and executed paths do not overlap in time")
    mask = (ref_times >= lo) & (ref_times <= hi)
    t = ref_times[mask]
    interp = np.column_stack([
        np.interp(t, exec_times, np.asarray(exec_positions, dtype=float)[:, i]) for i in range(3)
    ])
    err = np.linalg.norm(np.asarray(ref_positions, dtype=float)[mask] - interp, axis=1)
    return float(np.sqrt(np.mean(err**2))), float(err.max())


# Fixed standardization for the shipped push-in task: per-slot offsets at the
# midpoint of the working envelope (documented constants, derived once from
# the default scene geometry). Centering depth/radius/landmark slots makes
# the cosine discriminate framing depth instead of being dominated by shared
# positive components; subject centroid and visibility flags stay raw.
ALIGNMENT_OFFSET = np.array([
    0.0, 0.0, 0.40, 0.17, 0.0,          # subject u, v, depth, radius, vis
    0.0, 0.0, 0.0, 0.0,                 # obstacle corner slots stay raw
    0.52, 0.77, -0.52, 0.77, 0.0, 0.26,  # landmark (u, v) pairs
    0.72,                                # first landmark depth
])


def visual_alignment(f_last: np.ndarray, f_goal: np.ndarray,
                     scale: np.ndarray | None = None,
                     offset: np.ndarray | None = None) -> float:
    """Cosine similarity of two standardized feature vectors in [-1, 1].

    Standardization is (f - offset) * scale with fixed, documented
    constants; both default to the identity (offset 0, scale 1). The
    benchmark standardizes with ALIGNMENT_OFFSET so the similarity tracks
    framing rather than common-mode feature energy.
    """
    a = np.asarray(f_last, dtype=float)
    b = np.asarray(f_goal, dtype=float)
    if offset is not None:
        a = a - offset
        b = b - offset
    if scale is not None:
        a = a * scale
        b = b * scale
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero feature vector has no alignment direction")
    return float(np.dot(a, b) / (na * nb))


def success(collided: bool, f_last: np.ndarray, f_goal: np.ndarray,
            threshold: float = 0.85, scale: np.ndarray | None = None,
            offset: np.ndarray | None = None) -> bool:
    """Trial success: no collision and visual alignment strictly above threshold."""
    if collided:
        return False
    return visual_alignment(f_last, f_goal, scale=scale, offset=offset) > threshold


def cartesian_jerk(model: RobotModel, joints: np.ndarray, dt: float) -> float:
    """Mean third-order backward-difference jerk magnitude of the camera, m/s^3."""
    joints = np.asarray(joints, dtype=float)
    if len(joints) < 4:
        raise ValueError("need at least 4 samples for a third difference")
    _, _, _, cam_p = fk_batch(model, joints)
    d3 = cam_p[3:] - 3 * cam_p[2:-1] + 3 * cam_p[1:-2] - cam_p[:-3]
    return float(np.mean(np.linalg.norm(d3, axis=1)) / dt**3)


def framing_error(feature: np.ndarray, intrinsics: CameraIntrinsics) -> float:
    """Pixel distance between frame center and the subject centroid.

    An out-of-frame subject scores the worst-case half-diagonal so aggregates
    stay finite.
    """
    w, h = intrinsics.resolution
    if feature[FEAT_TARGET_VIS] != 1.0:
        return float(np.hypot(w / 2.0, h / 2.0))
    du = (feature[FEAT_TARGET_U] - intrinsics.principal[0]) * w / 2.0
    dv = (feature[FEAT_TARGET_V] - intrinsics.principal[1]) * h / 2.0
    return float(np.hypot(du, dv))


def srr(features: np.ndarray) -> float:
    """Subject retention rate: fraction of frames with the subject visible
    inside the central 50% of the frame (per axis)."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if len(features) == 0:
        raise ValueError("empty feature stream")
    kept = (
        (features[:, FEAT_TARGET_VIS] == 1.0)
        & (np.abs(features[:, FEAT_TARGET_U]) <= 0.5)
        & (np.abs(features[:, FEAT_TARGET_V]) <= 0.5)
    )
    return float(kept.mean())
