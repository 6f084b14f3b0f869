"""Benchmark harness: runs expert replay, planner, and policy methods over
shared trial specs and aggregates the metric suite into a report.

Every trial starts from a seed-deterministic start pose shared across
methods; the goal framing comes from a noiseless reference push-in built for
that start. Method failures are recorded as failed trials, never raised.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arm import RobotModel, forward_kinematics, Pose
from .control import solve_ik
from .data import FEATURE_RATE_HZ
from .deploy import DeployConfig, DeployController
from .geometry import look_at_quat
from .metrics import ALIGNMENT_OFFSET, cartesian_jerk, framing_error, srr, visual_alignment
from .planner import (
    ExpertStyle,
    PlannerParams,
    ScriptedExpertError,
    TimedTrajectory,
    plan_rrt_star,
    sample_start_config,
    scripted_push_in,
    shortcut_path,
    time_parameterize,
)
from .policy import PolicyParams
from .world import (
    FEATURE_DIM,
    Scene,
    ServoModel,
    SimWorld,
    in_collision,
    render_features,
)

TASKS = ("PUSH_IN_FREE", "PUSH_IN_OBSTACLE")
SUCCESS_THRESHOLD = 0.85
EXPERT_SPEED = 0.12          # m/s cartesian dolly pace, matching collection
POLICY_TRIAL_DURATION = 15.0  # seconds


@dataclass
class TrialSpec:
    task: str
    seed: int
    q_start: np.ndarray
    q_goal: np.ndarray
    goal_feature: np.ndarray


@dataclass
class TrialRecord:
    method: str
    task: str
    seed: int
    joint_times: np.ndarray      # executed stream, 200 Hz
    joints: np.ndarray
    feature_times: np.ndarray    # ~30 Hz
    features: np.ndarray
    goal: np.ndarray
    collided: bool
    latency_ms: list = field(default_factory=list)
    failed: bool = False
    failure: str = ""
    dropout_flagged: bool = False


def build_trial_spec(model: RobotModel, scene: Scene, task: str, seed: int,
                     max_attempts: int = 30) -> TrialSpec:
    """Deterministic start + reference goal for one trial seed.

    The reference push-in uses the task-natural style (direct in free scenes,
    the geometry-determined arc side around the obstacle), matching how
    demonstrations are collected.
    """
    from .collect import arc_side_for

    rng = np.random.default_rng(seed)
    last = None
    for _ in range(max_attempts):
        try:
            q_start = sample_start_config(model, scene, rng)
            style = (arc_side_for(scene, model, q_start) if scene.obstacle_present
                     else ExpertStyle.DIRECT)
            _, q_goal = scripted_push_in(
                model, scene, q_start, style, noise_sigma=0.0,
                seed=int(rng.integers(2**31)), speed=EXPERT_SPEED,
            )
            return TrialSpec(
                task=task,
                seed=seed,
                q_start=q_start,
                q_goal=q_goal,
                goal_feature=render_features(scene, model, q_goal),
            )
        except ScriptedExpertError as ex:
            last = ex
    raise RuntimeError(f"no valid trial for seed {seed}: {last}")


def _execute_stream(
    model: RobotModel, scene: Scene, spec: TrialSpec, commands: TimedTrajectory,
    seed: int, servo: ServoModel,
) -> TrialRecord:
    """Stream a 200 Hz command trajectory through the servo, recording the trial."""
    sim = SimWorld(model, scene, servo, seed=seed)
    sim.reset(spec.q_start)
    n = len(commands.times)
    settle = int(1.0 * servo.rate)  # let the servo settle at the endpoint
    joints = np.empty((n + settle, 6))
    jt = np.empty(n + settle)
    feats, ftimes = [], []
    next_feat = 0.0
    for k in range(n + settle):
        cmd = commands.positions[min(k, n - 1)]
        state = sim.step(cmd)
        joints[k] = state.q
        jt[k] = state.time
        if state.time >= next_feat:
            feats.append(render_features(scene, model, state.q))
            ftimes.append(state.time)
            next_feat += 1.0 / FEATURE_RATE_HZ
    return TrialRecord(
        method="", task=spec.task, seed=seed,
        joint_times=jt, joints=joints,
        feature_times=np.array(ftimes), features=np.stack(feats),
        goal=spec.goal_feature.copy(), collided=sim.state.collided,
    )


def run_expert_trial(model: RobotModel, scene: Scene, spec: TrialSpec,
                     noise_sigma: float = 2e-3, servo: ServoModel = ServoModel()) -> TrialRecord:
    """Teach-and-repeat replay of a (noisy) scripted demonstration."""
    rng = np.random.default_rng([spec.seed, 0xE])
    style = ExpertStyle.DIRECT if spec.task == "PUSH_IN_FREE" else (
        ExpertStyle.ARC_LEFT if rng.uniform() < 0.5 else ExpertStyle.ARC_RIGHT
    )
    last = None
    for attempt in range(10):
        try:
            traj, _ = scripted_push_in(
                model, scene, spec.q_start, style,
                noise_sigma=noise_sigma, seed=int(rng.integers(2**31)), speed=EXPERT_SPEED,
            )
            rec = _execute_stream(model, scene, spec, traj, spec.seed, servo)
            rec.method = "expert"
            return rec
        except ScriptedExpertError as ex:
            last = ex
            if style is not ExpertStyle.DIRECT:
                style = (ExpertStyle.ARC_RIGHT if style is ExpertStyle.ARC_LEFT
                         else ExpertStyle.ARC_LEFT)
    return _failed_record("expert", spec, str(last))


def margin_clear_goal(model: RobotModel, scene: Scene, spec: TrialSpec,
                      margin: float) -> np.ndarray | None:
    """Back the goal camera off along its approach ray until the
    configuration clears the planning margin."""
    p_goal = forward_kinematics(model, spec.q_goal)[0].position
    ray = p_goal - scene.target_pos
    ray = ray / np.linalg.norm(ray)
    base = float(np.linalg.norm(p_goal - scene.target_pos))
    q_prev = spec.q_goal
    for stop in np.arange(base, 0.80, 0.03):
        eye = scene.target_pos + ray * stop
        res = solve_ik(model, q_prev, Pose(position=eye,
                                           orientation=look_at_quat(eye, scene.target_pos)))
        if not res.converged:
            continue
        q_prev = res.q
        if not in_collision(model, res.q, scene, margin=margin):
            return res.q
    return None


def run_planner_trial(model: RobotModel, scene: Scene, spec: TrialSpec,
                      params: PlannerParams | None = None,
                      servo: ServoModel = ServoModel()) -> TrialRecord:
    """Plan with RRT* at the safety margin and execute open loop.

    Close-up goals can violate the margin around the obstacle; the goal is
    backed off along the approach ray until it clears, mirroring the
    stand-off behavior of a margin-respecting planner.
    """
    params = params or PlannerParams(seed=spec.seed)
    try:
        if in_collision(model, spec.q_start, scene, margin=params.safety_margin):
            return _failed_record("planner", spec, "start violates safety margin")
        q_goal = spec.q_goal
        if in_collision(model, q_goal, scene, margin=params.safety_margin):
            q_goal = margin_clear_goal(model, scene, spec, params.safety_margin)
            if q_goal is None:
                return _failed_record("planner", spec, "no margin-clear goal")
        path = plan_rrt_star(model, scene, spec.q_start, q_goal, params)
        if path is None:
            return _failed_record("planner", spec, "no plan within budget")
        path = shortcut_path(path, model, scene, params)
        traj = time_parameterize(path, model, rate_hz=servo.rate, speed_scale=0.05)
        rec = _execute_stream(model, scene, spec, traj, spec.seed, servo)
        rec.method = "planner"
        return rec
    except (ValueError, AssertionError) as ex:
        return _failed_record("planner", spec, str(ex))


def run_policy_trial(model: RobotModel, scene: Scene, spec: TrialSpec,
                     params: PolicyParams, deploy: DeployConfig = DeployConfig(),
                     duration: float = POLICY_TRIAL_DURATION,
                     servo: ServoModel = ServoModel()) -> TrialRecord:
    """Closed-loop rollout of a trained policy at the control rate."""
    sim = SimWorld(model, scene, servo, seed=spec.seed)
    sim.reset(spec.q_start)
    ctrl = DeployController(params, spec.goal_feature, deploy)
    ticks_per_cmd = int(round(servo.rate / deploy.rate_hz))
    n = int(duration * servo.rate)
    joints = np.empty((n, 6))
    jt = np.empty(n)
    feats, ftimes, latency = [], [], []
    next_feat = 0.0
    q_cmd = spec.q_start.copy()
    for k in range(n):
        t = k / servo.rate
        if k % ticks_per_cmd == 0:
            feat = render_features(scene, model, sim.state.q)
            t0 = time.perf_counter()
            decision = ctrl.observe(feat, sim.state.q, t)
            latency.append((time.perf_counter() - t0) * 1e3)
            if decision.command is not None:
                q_cmd = decision.command
        state = sim.step(q_cmd)
        joints[k] = state.q
        jt[k] = state.time
        if state.time >= next_feat:
            feats.append(render_features(scene, model, state.q))
            ftimes.append(state.time)
            next_feat += 1.0 / FEATURE_RATE_HZ
    rec = TrialRecord(
        method="policy", task=spec.task, seed=spec.seed,
        joint_times=jt, joints=joints,
        feature_times=np.array(ftimes), features=np.stack(feats),
        goal=spec.goal_feature.copy(), collided=sim.state.collided,
        latency_ms=latency, dropout_flagged=ctrl.dropout_flagged,
    )
    return rec


def _failed_record(method: str, spec: TrialSpec, reason: str) -> TrialRecord:
    f0 = np.zeros((1, FEATURE_DIM))
    return TrialRecord(
        method=method, task=spec.task, seed=spec.seed,
        joint_times=np.array([0.0]), joints=spec.q_start[None, :].copy(),
        feature_times=np.array([0.0]), features=f0,
        goal=spec.goal_feature.copy(), collided=False,
        failed=True, failure=reason,
    )


# --- metrics over records ---------------------------------------------------------

def evaluate_record(model: RobotModel, scene: Scene, rec: TrialRecord) -> dict:
    """All six metrics for one trial; pure function of the record."""
    if rec.failed:
        return {
            "method": rec.method, "task": rec.task, "seed": rec.seed,
            "success": False, "s_vis": 0.0,
            "jerk": None, "framing_px": None,
            "srr": 0.0, "latency_ms": None,
            "collided": rec.collided, "failed": True,
        }
    f_last = rec.features[-1]
    try:
        s_vis = visual_alignment(f_last, rec.goal, offset=ALIGNMENT_OFFSET)
    except ValueError:
        s_vis = 0.0  # blind final frame has no alignment
    dt = float(np.mean(np.diff(rec.joint_times))) if len(rec.joint_times) > 1 else 1.0
    return {
        "method": rec.method, "task": rec.task, "seed": rec.seed,
        "success": bool((not rec.collided) and s_vis > SUCCESS_THRESHOLD),
        "s_vis": s_vis,
        "jerk": cartesian_jerk(model, rec.joints, dt) if len(rec.joints) >= 4 else None,
        "framing_px": framing_error(f_last, scene.intrinsics),
        "srr": srr(rec.features),
        "latency_ms": float(np.mean(rec.latency_ms)) if rec.latency_ms else None,
        "collided": rec.collided, "failed": False,
    }


def _mean_of(values: list) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def aggregate(rows: list[dict]) -> dict:
    """Method x task aggregates in the comparison-table shape."""
    out: dict = {}
    keys = sorted({(r["method"], r["task"]) for r in rows})
    for method, task in keys:
        sel = [r for r in rows if r["method"] == method and r["task"] == task]
        n = len(sel)
        agg = {
            "n_trials": n,
            "success_pct": 100.0 * sum(r["success"] for r in sel) / n,
            "s_vis": float(np.mean([r["s_vis"] for r in sel])),
            "jerk": _mean_of([r["jerk"] for r in sel]),
            "framing_px": _mean_of([r["framing_px"] for r in sel]),
            "srr_pct": 100.0 * float(np.mean([r["srr"] for r in sel])),
            "latency_ms": _mean_of([r["latency_ms"] for r in sel]),
        }
        out.setdefault(method, {})[task] = agg
    return out


def render_table(agg: dict) -> str:
    """Text table mirroring the comparison-table columns."""
    lines = [
        f"{'Method':<22}{'Task':<18}{'Succ%':>7}{'S_vis':>8}{'Jerk':>9}"
        f"{'Frame_px':>10}{'SRR%':>7}{'Lat_ms':>8}"
    ]
    for method in sorted(agg):
        for task in sorted(agg[method]):
            a = agg[method][task]
            lat = f"{a['latency_ms']:.1f}" if a["latency_ms"] is not None else "--"
            jerk = f"{a['jerk']:.3f}" if a["jerk"] is not None else "--"
            frame = f"{a['framing_px']:.1f}" if a["framing_px"] is not None else "--"
            lines.append(
                f"{method:<22}{task:<18}{a['success_pct']:>7.1f}{a['s_vis']:>8.3f}"
                f"{jerk:>9}{frame:>10}{a['srr_pct']:>7.1f}{lat:>8}"
            )
    return "\n".join(lines)


# --- record persistence -------------------------------------------------------------

RECORD_MAGIC = b"CINEARM-TRIAL v1\n"


def save_record(rec: TrialRecord, path: str | Path) -> None:
    header = {
        "schema_version": 1,
        "method": rec.method, "task": rec.task, "seed": rec.seed,
        "collided": rec.collided, "failed": rec.failed, "failure": rec.failure,
        "dropout_flagged": rec.dropout_flagged,
        "latency_ms": rec.latency_ms,
        "counts": {"joints": len(rec.joints), "features": len(rec.features)},
    }
    with open(path, "wb") as f:
        f.write(RECORD_MAGIC)
        f.write((json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode())
        for block in (rec.joint_times, rec.joints, rec.feature_times, rec.features, rec.goal):
            f.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_record(path: str | Path) -> TrialRecord:
    with open(path, "rb") as f:
        if f.readline() != RECORD_MAGIC:
            raise ValueError(f"not a trial record: {path}")
        h = json.loads(f.readline().decode())
        n, m = h["counts"]["joints"], h["counts"]["features"]

        def read(shape):
            count = int(np.prod(shape))
            return np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape).copy()

        jt = read((n,))
        joints = read((n, 6))
        ft = read((m,))
        feats = read((m, FEATURE_DIM))
        goal = read((FEATURE_DIM,))
    return TrialRecord(
        method=h["method"], task=h["task"], seed=h["seed"],
        joint_times=jt, joints=joints, feature_times=ft, features=feats,
        goal=goal, collided=h["collided"], latency_ms=h["latency_ms"],
        failed=h["failed"], failure=h["failure"], dropout_flagged=h["dropout_flagged"],
    )


def run_benchmark(
    model: RobotModel,
    scenes: dict[str, Scene],
    methods: dict,          # name -> callable(model, scene, spec) -> TrialRecord
    tasks: tuple = TASKS,
    n_trials: int = 10,
    base_seed: int = 0,
    out_dir: str | Path | None = None,
) -> dict:
    """Shared start poses across methods; per-trial records persisted when
    out_dir is given. Method crashes become failed trials."""
    rows = []
    records = []
    for task in tasks:
        scene = scenes[task]
        specs = [
            build_trial_spec(model, scene, task, seed=base_seed + 1000 * (1 + TASKS.index(task)) + i)
            for i in range(n_trials)
        ]
        for name, runner in methods.items():
            for spec in specs:
                try:
                    rec = runner(model, scene, spec)
                except Exception as ex:  # recorded, never fatal to the harness
                    rec = _failed_record(name, spec, f"crash: {ex}")
                rec.method = name
                records.append(rec)
                rows.append(evaluate_record(model, scene, rec))
    report = {"rows": rows, "aggregate": aggregate(rows)}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for rec in records:
            save_record(rec, out_dir / f"trial_{rec.method}_{rec.task}_{rec.seed}.ctr")
        (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1))
        (out_dir / "table.txt").write_text(render_table(report["aggregate"]) + "\n")
    return report
