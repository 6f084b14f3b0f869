"""Classical planning baseline and scripted demonstration experts.

Joint-space RRT* with capsule collision checking at a safety margin,
shortcut post-processing, velocity-limited time parameterization, and
min-jerk-profiled push-in trajectory generators used to synthesize
demonstration episodes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .arm import N_JOINTS, Pose, RobotModel, fk_batch, forward_kinematics
from .control import IkParams, solve_ik
from .geometry import look_at_quat
from .world import (
    FEAT_TARGET_VIS,
    Scene,
    in_collision,
    in_collision_batch,
    render_features,
    segment_collision_free,
)


@dataclass(frozen=True)
class PlannerParams:
    step_size: float = 0.2              # radians, joint-space extension
    goal_bias: float = 0.1
    max_iterations: int = 4000
    rewire_radius_scale: float = 1.5    # gamma of the shrinking RRT* radius
    safety_margin: float = 0.075        # meters
    seed: int = 0
    check_resolution: float = 0.05      # radians, edge checks while growing
    certify_resolution: float = 0.01    # radians, final dense certification
    refine_iterations: int | None = 400  # budget after first solution; None = run full

    def __post_init__(self):
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must be in [0, 1]")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.safety_margin < 0:
            raise ValueError("safety_margin must be >= 0")


@dataclass(frozen=True)
class Path:
    waypoints: np.ndarray  # (n, 6)

    def __post_init__(self):
        wp = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        object.__setattr__(self, "waypoints", wp)

    @property
    def cost(self) -> float:
        """Total joint-space Euclidean length, radians."""
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))


@dataclass(frozen=True)
class TimedTrajectory:
    times: np.ndarray      # (n,), strictly increasing seconds
    positions: np.ndarray  # (n, 6)

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        if len(self.times) != len(self.positions):
            raise ValueError("times and positions must align")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def sample(self, t: float) -> np.ndarray:
        """Linear interpolation, clamped to the trajectory support."""
        out = np.empty(N_JOINTS)
        for j in range(N_JOINTS):
            out[j] = np.interp(t, self.times, self.positions[:, j])
        return out


# --- RRT* ---------------------------------------------------------------------

def plan_rrt_star(
    model: RobotModel,
    scene: Scene,
    q_start: np.ndarray,
    q_goal: np.ndarray,
    params: PlannerParams = PlannerParams(),
) -> Path | None:
    """Joint-space RRT* between two collision-free configurations.

    Returns None when no solution is found within the iteration budget.
    Endpoints inside the safety margin are rejected with ValueError. Every
    returned path is re-certified densely at certify_resolution.
    """
    q_start = np.asarray(q_start, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)
    for name, q in (("start", q_start), ("goal", q_goal)):
        if not model.within_limits(q, tol=1e-9):
            raise ValueError(f"{name} configuration outside joint limits")
        if in_collision(model, q, scene, margin=params.safety_margin):
            raise ValueError(f"{name} configuration in collision at the safety margin")

    if np.allclose(q_start, q_goal, atol=1e-12):
        return Path(waypoints=q_start[None, :])

    rng = np.random.default_rng(params.seed)
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]
    cap = params.max_iterations + 2
    nodes = np.empty((cap, N_JOINTS))
    parent = np.full(cap, -1, dtype=int)
    cost = np.full(cap, np.inf)
    children: list[list[int]] = [[] for _ in range(cap)]
    GOAL = 1
    nodes[0] = q_start
    cost[0] = 0.0
    nodes[GOAL] = q_goal  # joins the tree once an edge reaches it
    n = 2
    found_at = None

    def edge_free(qa, qb):
        return segment_collision_free(
            model, scene, qa, qb, params.safety_margin, params.check_resolution
        )

    def reparent(j: int, new_parent: int, new_cost: float) -> None:
        old = parent[j]
        if old >= 0:
            children[old].remove(j)
        parent[j] = new_parent
        children[new_parent].append(j)
        delta = new_cost - cost[j]
        cost[j] = new_cost
        stack = list(children[j])
        while stack:
            k = stack.pop()
            cost[k] += delta
            stack.extend(children[k])

    for it in range(params.max_iterations):
        if found_at is not None and params.refine_iterations is not None:
            if it - found_at >= params.refine_iterations:
                break
        sample = q_goal if rng.uniform() < params.goal_bias else rng.uniform(lo, hi)
        connected = np.isfinite(cost[:n])
        d = np.linalg.norm(nodes[:n] - sample, axis=1)
        d[~connected] = np.inf
        near_i = int(np.argmin(d))
        dist = d[near_i]
        if dist < 1e-12:
            continue
        q_new = sample if dist <= params.step_size else (
            nodes[near_i] + (sample - nodes[near_i]) * (params.step_size / dist)
        )
        if not edge_free(nodes[near_i], q_new):
            continue
        radius = min(
            params.rewire_radius_scale * (np.log(n + 1) / (n + 1)) ** (1.0 / N_JOINTS),
            4.0 * params.step_size,
        )
        dn = np.linalg.norm(nodes[:n] - q_new, axis=1)
        neighbor_idx = [j for j in np.flatnonzero(dn <= radius) if connected[j]]
        best_parent = near_i
        best_cost = cost[near_i] + dn[near_i]
        for j in neighbor_idx:
            c = cost[j] + dn[j]
            if c < best_cost and edge_free(nodes[j], q_new):
                best_parent = j
                best_cost = c
        new_i = n
        nodes[new_i] = q_new
        parent[new_i] = best_parent
        cost[new_i] = best_cost
        children[best_parent].append(new_i)
        n += 1
        # rewire neighbors (and the goal, when in reach) through the new node
        rewire_set = list(neighbor_idx)
        gd = float(dn[GOAL])
        if gd <= max(radius, params.step_size) and GOAL not in rewire_set:
            rewire_set.append(GOAL)
        for j in rewire_set:
            if j == best_parent:
                continue
            c = best_cost + dn[j]
            if c < cost[j] and edge_free(q_new, nodes[j]):
                reparent(j, new_i, c)
                if j == GOAL and found_at is None:
                    found_at = it

    if not np.isfinite(cost[GOAL]):
        return None
    chain = [int(GOAL)]
    while parent[chain[-1]] >= 0:
        chain.append(int(parent[chain[-1]]))
    wp = nodes[chain[::-1]]
    path = Path(waypoints=wp)
    _certify(path, model, scene, params)
    return path


def _certify(path: Path, model: RobotModel, scene: Scene, params: PlannerParams) -> None:
    for qa, qb in zip(path.waypoints, path.waypoints[1:]):
        if not segment_collision_free(
            model, scene, qa, qb, params.safety_margin, params.certify_resolution
        ):
            raise AssertionError("planner produced an edge that fails dense certification")


def shortcut_path(
    path: Path,
    model: RobotModel,
    scene: Scene,
    params: PlannerParams = PlannerParams(),
    rounds: int = 100,
) -> Path:
    """Random-pair shortcutting; output stays collision-free at the same margin."""
    wp = [w for w in path.waypoints]
    if len(wp) < 3:
        return path
    rng = np.random.default_rng(params.seed + 1)
    for _ in range(rounds):
        if len(wp) < 3:
            break
        i = int(rng.integers(0, len(wp) - 2))
        j = int(rng.integers(i + 2, len(wp)))
        if segment_collision_free(
            model, scene, wp[i], wp[j], params.safety_margin, params.certify_resolution
        ):
            wp = wp[: i + 1] + wp[j:]
    out = Path(waypoints=np.array(wp))
    _certify(out, model, scene, params)
    return out


def time_parameterize(
    path: Path,
    model: RobotModel,
    rate_hz: float = 200.0,
    speed_scale: float = 1.0,
) -> TimedTrajectory:
    """Constant-velocity segments at speed_scale of the per-joint limits."""
    if not 0.0 < speed_scale <= 1.0:
        raise ValueError("speed_scale must be in (0, 1]")
    wp = path.waypoints
    if len(wp) < 2:
        return TimedTrajectory(times=np.array([0.0]), positions=wp.copy())
    seg_dur = [
        float(np.max(np.abs(b - a) / (speed_scale * model.velocity_limits)))
        for a, b in zip(wp, wp[1:])
    ]
    knots = np.concatenate([[0.0], np.cumsum(seg_dur)])
    total = knots[-1]
    n = int(np.floor(total * rate_hz)) + 1
    times = np.arange(n) / rate_hz
    if times[-1] < total - 1e-12:
        times = np.append(times, total)
    qs = np.empty((len(times), N_JOINTS))
    for j in range(N_JOINTS):
        qs[:, j] = np.interp(times, knots, wp[:, j])
    return TimedTrajectory(times=times, positions=qs)


def min_jerk_profile(s: np.ndarray) -> np.ndarray:
    """Scalar min-jerk position profile on s in [0, 1]."""
    return 10.0 * s**3 - 15.0 * s**4 + 6.0 * s**5


def min_jerk_segment(
    q0: np.ndarray, q1: np.ndarray, duration: float, rate_hz: float = 200.0
) -> TimedTrajectory:
    """Point-to-point joint move with zero boundary velocity and acceleration."""
    if duration <= 0:
        raise ValueError("duration must be > 0")
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    n = int(np.floor(duration * rate_hz)) + 1
    times = np.arange(n) / rate_hz
    if times[-1] < duration - 1e-12:
        times = np.append(times, duration)
    s = min_jerk_profile(times / duration)
    qs = q0 + s[:, None] * (q1 - q0)
    return TimedTrajectory(times=times, positions=qs)


# --- scripted experts -------------------------------------------------------------

class ExpertStyle(enum.Enum):
    DIRECT = "DIRECT"
    ARC_LEFT = "ARC_LEFT"
    ARC_RIGHT = "ARC_RIGHT"


class ScriptedExpertError(RuntimeError):
    """Generation failure (IK breakdown or collision); caller retries."""


_TRACK_IK = IkParams(max_iters=60)


def scripted_push_in(
    model: RobotModel,
    scene: Scene,
    q_start: np.ndarray,
    style: ExpertStyle = ExpertStyle.DIRECT,
    noise_sigma: float = 0.0,
    seed: int = 0,
    stop_distance: float | None = None,
    arc_amplitude: float | None = None,
    speed: float = 0.12,
    rate_hz: float = 200.0,
    hold_s: float = 1.5,
) -> tuple[TimedTrajectory, np.ndarray]:
    """Synthesize one push-in demonstration from q_start toward the target.

    The camera travels a min-jerk-timed chord toward the target (DIRECT) or a
    lateral arc around it (ARC_*), looking at the target throughout, ending
    stop_distance away with the subject centered, then holds the final
    framing for hold_s seconds the way an operator finishes a shot. Optional
    band-limited joint noise mimics human jitter; endpoints stay exact. The
    result is verified collision-free at zero margin.

    Returns (trajectory at rate_hz, goal configuration).
    """
    rng = np.random.default_rng(seed)
    q_start = np.asarray(q_start, dtype=float)
    f0 = render_features(scene, model, q_start)
    if f0[FEAT_TARGET_VIS] != 1.0:
        raise ScriptedExpertError("target not visible from the start configuration")

    target = scene.target_pos
    p0 = forward_kinematics(model, q_start)[0].position
    ray = p0 - target
    ray_len = float(np.linalg.norm(ray))
    if stop_distance is None:
        stop_distance = float(rng.uniform(0.20, 0.30))
    stop_distance = min(stop_distance, ray_len - 1e-3)
    p1 = target + ray * (stop_distance / ray_len)

    chord = p1 - p0
    up = np.array([0.0, 0.0, 1.0])
    lateral = np.cross(up, chord / max(np.linalg.norm(chord), 1e-9))
    ln = np.linalg.norm(lateral)
    lateral = lateral / ln if ln > 1e-9 else np.array([0.0, 1.0, 0.0])
    if style is ExpertStyle.DIRECT:
        amp = 0.0
    else:
        amp = float(rng.uniform(0.10, 0.16)) if arc_amplitude is None else arc_amplitude
        if style is ExpertStyle.ARC_RIGHT:
            amp = -amp
    lift = 0.35 * abs(amp)  # arcs bulge slightly upward too, clearing low obstacles

    length = float(np.linalg.norm(chord)) + abs(amp)
    move_s = float(np.clip(length / speed, 2.0, 12.0))
    duration = move_s + max(hold_s, 0.0)
    n = int(np.floor(duration * rate_hz)) + 1
    times = np.arange(n) / rate_hz
    s = min_jerk_profile(np.clip(times / move_s, 0.0, 1.0))

    qs = np.empty((n, N_JOINTS))
    q_prev = q_start
    for i in range(n):
        if i > 0 and s[i] == s[i - 1]:
            qs[i] = qs[i - 1]  # holding the final framing
            continue
        bulge = np.sin(np.pi * s[i])
        pos = p0 + s[i] * chord + bulge * (amp * lateral + lift * up)
        pose = Pose(position=pos, orientation=look_at_quat(pos, target))
        res = solve_ik(model, q_prev, pose, _TRACK_IK)
        if not res.converged:
            raise ScriptedExpertError(f"IK failed at sample {i} ({res.pos_err:.4f} m)")
        qs[i] = res.q
        q_prev = res.q

    if noise_sigma > 0.0:
        qs = qs + _band_limited_jitter(rng, n, noise_sigma, times / move_s)

    if np.any(in_collision_batch(model, qs, scene, margin=0.0)):
        raise ScriptedExpertError("generated trajectory collides")
    violations = (qs < model.joint_limits[:, 0]) | (qs > model.joint_limits[:, 1])
    if np.any(violations):
        raise ScriptedExpertError("generated trajectory exceeds joint limits")
    return TimedTrajectory(times=times, positions=qs), qs[-1].copy()


def _band_limited_jitter(rng, n: int, sigma: float, phase: np.ndarray) -> np.ndarray:
    """Smoothed joint noise, std ~ sigma, tapered to zero at both endpoints."""
    white = rng.normal(0.0, 1.0, size=(n, N_JOINTS))
    smooth = np.empty_like(white)
    alpha = 0.04
    acc = np.zeros(N_JOINTS)
    for i in range(n):
        acc = alpha * white[i] + (1.0 - alpha) * acc
        smooth[i] = acc
    acc = np.zeros(N_JOINTS)
    for i in range(n - 1, -1, -1):
        acc = alpha * smooth[i] + (1.0 - alpha) * acc
        smooth[i] = acc
    std = np.std(smooth, axis=0)
    std[std < 1e-12] = 1.0
    taper = np.sin(np.pi * np.clip(phase, 0.0, 1.0)) ** 2
    return smooth / std * sigma * taper[:, None]


def sample_start_config(
    model: RobotModel,
    scene: Scene,
    rng: np.random.Generator,
    dist_range: tuple[float, float] = (0.50, 0.65),
    elev_range: tuple[float, float] = (0.50, 0.80),
    azim_range: tuple[float, float] = (-0.45, 0.45),
    max_tries: int = 50,
) -> np.ndarray:
    """Random camera start: in a spherical band behind/above the target,
    looking at it, collision-free, with the target visible."""
    target = scene.target_pos
    base_azim = np.arctan2(target[1], target[0])
    seed_q = np.array([0.0, 0.7, 0.9, 0.0, 0.5, 0.0])
    for _ in range(max_tries):
        dist = rng.uniform(*dist_range)
        elev = rng.uniform(*elev_range)
        azim = base_azim + np.pi + rng.uniform(*azim_range)  # behind the target
        eye = target + dist * np.array([
            np.cos(elev) * np.cos(azim),
            np.cos(elev) * np.sin(azim),
            np.sin(elev),
        ])
        pose = Pose(position=eye, orientation=look_at_quat(eye, target))
        res = solve_ik(model, seed_q, pose)
        if not res.converged:
            continue
        if in_collision(model, res.q, scene, margin=0.02):
            continue
        if render_features(scene, model, res.q)[FEAT_TARGET_VIS] != 1.0:
            continue
        return res.q
    raise ScriptedExpertError("could not sample a valid start configuration")
