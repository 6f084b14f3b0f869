"""Damped-least-squares IK with EMA smoothing, plus the low-level command
conditioning chain (first-order low-pass, velocity-limited ramp, watchdog).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .arm import N_JOINTS, Pose, RobotModel, fk_chain, jacobian
from .geometry import (
    quat_conjugate,
    quat_from_matrix,
    quat_log,
    quat_multiply,
    quat_to_matrix,
)


@dataclass(frozen=True)
class IkParams:
    """DLS solver knobs.

    The effective damping each iteration is damping + |e_clamped|^2
    (residual-scaled, keeps far steps conservative and near steps crisp);
    pos_cap / rot_cap bound the error fed to one linearized step.
    """

    damping: float = 1e-3       # lambda floor, > 0
    step_size: float = 1.0      # eta in (0, 1]
    ema_alpha: float = 0.85     # alpha in (0, 1)
    pos_tol: float = 1e-4       # meters
    rot_tol: float = 1e-3       # radians
    max_iters: int = 500
    pos_cap: float = 0.3        # meters per linearized step
    rot_cap: float = 0.8        # radians per linearized step
    stall_window: int = 20      # iterations without progress before reseeding

    def __post_init__(self):
        if not self.damping > 0:
            raise ValueError("damping must be > 0")
        if not 0 < self.step_size <= 1:
            raise ValueError("step_size must be in (0, 1]")
        if not 0 < self.ema_alpha < 1:
            raise ValueError("ema_alpha must be in (0, 1)")
        if self.pos_tol <= 0 or self.rot_tol <= 0:
            raise ValueError("tolerances must be > 0")


@dataclass
class IkResult:
    q: np.ndarray
    iters: int
    converged: bool
    pos_err: float
    rot_err: float


def pose_error(current: Pose, target: Pose) -> np.ndarray:
    """6-vector error: translation delta, then rotation-vector log of the
    relative rotation target * current^-1 (world frame)."""
    e = np.empty(6)
    e[:3] = target.position - current.position
    rel = quat_multiply(target.orientation, quat_conjugate(current.orientation))
    e[3:] = quat_log(rel)
    return e


def ik_step(model: RobotModel, q: np.ndarray, e: np.ndarray, params: IkParams) -> np.ndarray:
    """One damped-least-squares update: J^T (J J^T + lambda I)^-1 e."""
    e = np.asarray(e, dtype=float)
    if not np.all(np.isfinite(e)):
        raise ValueError("pose error contains non-finite entries")
    J = jacobian(model, q)
    A = J @ J.T
    A[np.diag_indices_from(A)] += params.damping
    return J.T @ np.linalg.solve(A, e)


def _rot_err_vec(R_err: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix, robust at 0 and pi."""
    tr = R_err[0, 0] + R_err[1, 1] + R_err[2, 2]
    v = np.array([
        R_err[2, 1] - R_err[1, 2],
        R_err[0, 2] - R_err[2, 0],
        R_err[1, 0] - R_err[0, 1],
    ])
    s2 = np.linalg.norm(v)  # 2 sin(angle)
    if s2 < 1e-9:
        if tr > 1.0:
            return 0.5 * v
        return quat_log(quat_from_matrix(R_err))
    return v * (np.arctan2(s2, tr - 1.0) / s2)


def _decoupled_chain_params(model: RobotModel):
    """(base_height, upper_len, fore_len) when the model is the canonical
    decoupled z-y-y-z-y-z chain with a wrist-centered camera, else None."""
    want_axes = np.array([[0, 0, 1], [0, 1, 0], [0, 1, 0], [0, 0, 1], [0, 1, 0], [0, 0, 1]],
                         dtype=float)
    if not np.allclose(model._axes, want_axes, atol=1e-12):
        return None
    for R in model._Rfix:
        if not np.allclose(R, np.eye(3), atol=1e-12):
            return None
    t = model._t
    if not np.allclose(t[:, :2], 0.0, atol=1e-12) or not np.allclose(model._cam_p, 0.0, atol=1e-12):
        return None
    h = t[0, 2] + t[1, 2]
    L1 = t[2, 2]
    L2 = t[3, 2] + t[4, 2] + t[5, 2]
    if L1 <= 0 or L2 <= 0:
        return None
    return h, L1, L2


def _wrap_pi(a: float) -> float:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def _analytic_seeds(model: RobotModel, tgt_pos: np.ndarray, R_tgt: np.ndarray) -> list[np.ndarray]:
    """Closed-form branch configurations for the canonical decoupled chain.

    Used only as reseed candidates: the DLS loop remains the solver. Returns
    an empty list for non-canonical geometry or unreachable targets.
    """
    chain = _decoupled_chain_params(model)
    if chain is None:
        return []
    h, L1, L2 = chain
    tx, ty, tz = tgt_pos
    zp = tz - h
    r = np.hypot(tx, ty)
    yaw0 = np.arctan2(ty, tx) if r > 1e-9 else 0.0
    R_wrist_goal = R_tgt @ model._cam_R.T
    seeds = []
    for dyaw in (0.0, np.pi):
        vx = r if dyaw == 0.0 else -r
        D2 = vx * vx + zp * zp
        ce = np.clip((D2 - L1 * L1 - L2 * L2) / (2.0 * L1 * L2), -1.0, 1.0)
        for elbow_sign in (1.0, -1.0):
            q3 = elbow_sign * np.arccos(ce)
            q2 = _wrap_pi(np.arctan2(vx, zp) - np.arctan2(L2 * np.sin(q3), L1 + L2 * np.cos(q3)))
            q1 = _wrap_pi(yaw0 + dyaw)
            cy, sy = np.cos(q1), np.sin(q1)
            cp, sp = np.cos(q2 + q3), np.sin(q2 + q3)
            # R_arm = Rz(q1) @ Ry(q2+q3)
            R_arm = np.array([[cy * cp, -sy, cy * sp],
                              [sy * cp, cy, sy * sp],
                              [-sp, 0.0, cp]])
            M = R_arm.T @ R_wrist_goal  # = Rz(q4) Ry(q5) Rz(q6)
            c5 = np.clip(M[2, 2], -1.0, 1.0)
            for q5 in (np.arccos(c5), -np.arccos(c5)):
                s5 = np.sin(q5)
                if abs(s5) > 1e-9:
                    q4 = np.arctan2(M[1, 2] / s5, M[0, 2] / s5)
                    q6 = np.arctan2(M[2, 1] / s5, -M[2, 0] / s5)
                else:
                    q4 = np.arctan2(M[1, 0], M[0, 0]) if c5 > 0 else np.arctan2(-M[1, 0], -M[0, 0])
                    q6 = 0.0
                cand = np.array([q1, q2, q3, q4, q5, q6])
                cand[3] = _wrap_pi(cand[3])
                cand[5] = _wrap_pi(cand[5])
                if model.within_limits(cand, tol=1e-9):
                    seeds.append(model.clamp(cand))
    return seeds


def solve_ik(
    model: RobotModel,
    q0: np.ndarray,
    target: Pose,
    params: IkParams = IkParams(),
    trace: list | None = None,
) -> IkResult:
    """Iterate DLS updates toward a Cartesian target.

    Each iteration: q_ik = q + eta * dq, then EMA smoothing against the
    previous command, then joint-limit clamping. The EMA state starts fresh
    at q0 for every new target. Cold starts with a large initial error are
    reseeded from closed-form branch candidates when the model geometry
    allows it; stalls reseed the same way. Non-convergence is returned,
    never raised.
    """
    q = model.clamp(np.asarray(q0, dtype=float).copy())
    q_cmd = q.copy()
    tgt_pos = np.asarray(target.position, dtype=float)
    R_tgt = quat_to_matrix(target.orientation)
    seeds = _analytic_seeds(model, tgt_pos, R_tgt)
    if seeds:
        order = np.argsort([np.linalg.norm(s - q) for s in seeds])
        seeds = [seeds[i] for i in order]
        # cold start: jump straight to the nearest analytic branch
        _, _, _, _, cam_p0 = fk_chain(model, q)
        if np.linalg.norm(tgt_pos - cam_p0) > 0.5:
            q = seeds.pop(0)
            q_cmd = q.copy()
    reseed_rng = np.random.default_rng(0x1C4A)
    pos_err = rot_err = np.inf
    best_err = np.inf
    global_best = (np.inf, q.copy(), np.inf, np.inf)
    last_improve = 0
    attempt_start = 0
    attempt_cap = 150  # first attempt honors the caller's q0 longest
    restarts = 0
    J = np.empty((6, N_JOINTS))
    e = np.empty(6)
    for it in range(params.max_iters + 1):
        _, link_p, axes_w, cam_R, cam_p = fk_chain(model, q)
        e[:3] = tgt_pos - cam_p
        e[3:] = _rot_err_vec(R_tgt @ cam_R.T)
        pos_err = float(np.linalg.norm(e[:3]))
        rot_err = float(np.linalg.norm(e[3:]))
        if trace is not None:
            trace.append((pos_err, rot_err))
        if pos_err < params.pos_tol and rot_err < params.rot_tol:
            return IkResult(q=q, iters=it, converged=True, pos_err=pos_err, rot_err=rot_err)
        err = pos_err + 0.3 * rot_err
        if err < best_err * (1.0 - 1e-3):
            best_err = err
            last_improve = it
        if err < global_best[0]:
            global_best = (err, q.copy(), pos_err, rot_err)
        if it == params.max_iters:
            break
        far = pos_err > 5e-3 or rot_err > 2e-2
        # exact branch seeds make reseeding cheap; without them, polish longer
        patience = params.stall_window if (far or seeds) else 3 * params.stall_window
        if it - last_improve > patience or it - attempt_start > attempt_cap:
            restarts += 1
            if seeds:
                q = seeds.pop(0)
            elif restarts % 2 == 0:
                q = model.clamp(global_best[1] + reseed_rng.normal(scale=0.5, size=N_JOINTS))
            else:
                q = reseed_rng.uniform(model.joint_limits[:, 0], model.joint_limits[:, 1])
            q_cmd = q.copy()
            best_err = np.inf
            last_improve = it
            attempt_start = it
            attempt_cap = 60
            continue
        ec = e.copy()
        if pos_err > params.pos_cap:
            ec[:3] *= params.pos_cap / pos_err
        if rot_err > params.rot_cap:
            ec[3:] *= params.rot_cap / rot_err
        J[:3] = np.cross(axes_w, cam_p - link_p).T
        J[3:] = axes_w.T
        A = J @ J.T
        A[np.diag_indices_from(A)] += params.damping + ec @ ec
        dq = J.T @ np.linalg.solve(A, ec)
        q_cmd = model.clamp(params.ema_alpha * (q + params.step_size * dq)
                            + (1.0 - params.ema_alpha) * q_cmd)
        q = q_cmd.copy()
    _, bq, bp, br = global_best
    return IkResult(q=bq, iters=params.max_iters, converged=False, pos_err=bp, rot_err=br)


class WatchdogState(enum.Enum):
    ACTIVE = "ACTIVE"
    PASSIVE = "PASSIVE"


@dataclass
class CommandFilter:
    """Stateful command conditioner: low-pass, ramp limit, watchdog timestamp.

    One instance per controller; single writer.
    """

    lp_alpha: float = 0.08
    ramp_limit: float = 0.8     # rad/s, configurable 0.6-1.0
    timeout: float = 0.250      # seconds
    lp_state: np.ndarray | None = None
    prev: np.ndarray | None = None
    last_cmd_time: float | None = None
    _passive: bool = field(default=False, repr=False)

    def __post_init__(self):
        if not 0 < self.lp_alpha <= 1:
            raise ValueError("lp_alpha must be in (0, 1]")
        if self.ramp_limit <= 0:
            raise ValueError("ramp_limit must be > 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")

    def reset(self, q: np.ndarray) -> None:
        q = np.asarray(q, dtype=float).copy()
        self.lp_state = q
        self.prev = q.copy()


def condition_command(
    filt: CommandFilter, q_raw: np.ndarray, dt: float, now: float | None = None
) -> np.ndarray:
    """Low-pass then ramp-limit a raw command; updates filter state.

    out = prev + clamp(lp(q_raw) - prev, +-ramp_limit*dt). A first call on an
    unseeded filter seeds both states at q_raw and passes it through.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    q_raw = np.asarray(q_raw, dtype=float)
    if filt.prev is None or filt.lp_state is None:
        filt.reset(q_raw)
        out = q_raw.copy()
    else:
        filt.lp_state = filt.lp_alpha * q_raw + (1.0 - filt.lp_alpha) * filt.lp_state
        max_step = filt.ramp_limit * dt
        out = filt.prev + np.clip(filt.lp_state - filt.prev, -max_step, max_step)
        filt.prev = out.copy()
    if now is not None:
        filt.last_cmd_time = now
        filt._passive = False
    return out


def note_command(filt: CommandFilter, now: float) -> None:
    """Register command arrival for the watchdog without filtering."""
    filt.last_cmd_time = now
    filt._passive = False


def watchdog(filt: CommandFilter, now: float) -> WatchdogState:
    """PASSIVE iff the gap since the last command strictly exceeds the timeout.

    PASSIVE latches until a fresh command arrives; the check is idempotent.
    """
    if filt._passive:
        return WatchdogState.PASSIVE
    if filt.last_cmd_time is not None and now - filt.last_cmd_time > filt.timeout:
        filt._passive = True
        return WatchdogState.PASSIVE
    return WatchdogState.ACTIVE
