"""Teleoperation service: the real-time simulation session and its
websocket front end.

SimSession owns all mutable state and is driven by a single tick loop
(200 Hz); client handlers only enqueue validated messages, which the tick
loop consumes, so clients never observe torn state. The server broadcasts
state frames at the configured rate (default 30 Hz). A virtual-time mode
runs the same session as fast as possible with injected timestamps for
deterministic tests.
"""
from __future__ import annotations

import asyncio
import json
import os
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arm import Pose, RobotModel, forward_kinematics
from .control import (
    CommandFilter,
    IkParams,
    WatchdogState,
    condition_command,
    note_command,
    solve_ik,
    watchdog,
)
from .bench import TrialRecord, save_record
from .data import FEATURE_RATE_HZ, Episode, save_episode
from .deploy import DeployConfig, DeployController
from .planner import Path as PlanPath
from .planner import PlannerParams, plan_rrt_star, shortcut_path, time_parameterize
from .protocol import PROTOCOL_VERSION, ProtocolError, decode_client, encode, error_reply
from .training import load_checkpoint
from .world import Scene, ServoModel, SimWorld, render_features, scene_to_dict

DATA_DIR_ENV = "CINEARM_DATA_DIR"

MODES = ("IDLE", "TELEOP", "RECORDING", "ROLLOUT_POLICY", "ROLLOUT_PLANNER", "PASSIVE")


@dataclass
class ServiceConfig:
    broadcast_hz: float = 30.0
    control_rate_hz: float = 200.0
    policy_rate_hz: float = 10.0
    min_recording_s: float = 1.0
    data_dir: Path = field(
        default_factory=lambda: Path(os.environ.get(DATA_DIR_ENV, "./cinearm_data"))
    )


class SimSession:
    """Single-writer session logic: one tick loop mutates, handlers enqueue."""

    def __init__(self, model: RobotModel, scene: Scene,
                 servo: ServoModel = ServoModel(),
                 config: ServiceConfig = ServiceConfig(),
                 seed: int | None = None,
                 home_q: np.ndarray | None = None):
        self.model = model
        self.scene = scene
        self.config = config
        self.sim = SimWorld(model, scene, servo, seed=seed)
        q0 = np.array([0.0, 0.7, 0.9, 0.0, 0.5, 0.0]) if home_q is None else np.asarray(home_q)
        self.sim.reset(q0)
        self.mode = "IDLE"
        self.filter = CommandFilter()
        self.filter.reset(q0)
        self.q_cmd = q0.copy()
        self.raw_cmd = q0.copy()   # unconditioned target the inputs accumulate into
        self.jog_velocity = np.zeros(6)
        self.drag_target: Pose | None = None
        self.goal_feature: np.ndarray | None = None
        self.recorder: dict | None = None
        self.rollout: dict | None = None
        self.out_seq = 0
        self.events: list[dict] = []
        self._next_feature_time = 0.0
        self._last_feature = render_features(scene, model, q0)

    # --- message handling -------------------------------------------------

    def handle_message(self, msg: dict) -> list[str]:
        """Process one validated client message; returns encoded replies."""
        now = self.sim.state.time
        mtype = msg["type"]
        seq = msg["seq"]
        try:
            if mtype == "hello":
                return [self._reply("hello", {"version": PROTOCOL_VERSION,
                                              "reply_to": seq,
                                              "scene": scene_to_dict(self.scene)})]
            if mtype == "mode":
                want = msg["payload"]["mode"]
                if want == "TELEOP":
                    self._require_no_rollout(seq)
                    self.mode = "TELEOP"
                    self.raw_cmd = self.q_cmd.copy()
                    note_command(self.filter, now)
                else:
                    if self.mode == "RECORDING":
                        raise ProtocolError("stop recording before leaving TELEOP", seq=seq)
                    self._stop_rollout()
                    self.mode = "IDLE"
                self.jog_velocity[:] = 0.0
                self.drag_target = None
                return [self._ok(seq, {"mode": self.mode})]
            if mtype == "jog":
                self._require_teleop(seq)
                j = msg["payload"]["joint"]
                self.jog_velocity[j] = float(msg["payload"]["velocity"])
                self.drag_target = None
                note_command(self.filter, now)
                return [self._ok(seq, {})]
            if mtype == "drag":
                self._require_teleop(seq)
                pos = np.asarray(msg["payload"]["position"], dtype=float)
                quat = msg["payload"].get("orientation")
                if quat is None:
                    quat = forward_kinematics(self.model, self.sim.state.q)[0].orientation
                self.drag_target = Pose(position=pos, orientation=np.asarray(quat, dtype=float))
                self.jog_velocity[:] = 0.0
                note_command(self.filter, now)
                return [self._ok(seq, {})]
            if mtype == "record_start":
                if self.mode != "TELEOP":
                    raise ProtocolError("recording requires TELEOP mode", seq=seq)
                self.recorder = {
                    "t0": now, "joint_times": [], "joints": [],
                    "feature_times": [], "features": [],
                    "next_feature": now,
                }
                self.mode = "RECORDING"
                return [self._ok(seq, {})]
            if mtype == "record_stop":
                return [self._finish_recording(seq)]
            if mtype == "capture_goal":
                if self.mode == "PASSIVE":
                    raise ProtocolError("cannot capture a goal in PASSIVE mode", seq=seq)
                feat = render_features(self.scene, self.model, self.sim.state.q)
                self.goal_feature = feat
                preview = self._goal_preview(feat)
                return [self._ok(seq, {"goal": feat.tolist(), "preview": preview})]
            if mtype == "rollout_policy":
                return [self._start_policy_rollout(msg, seq)]
            if mtype == "rollout_planner":
                return [self._start_planner_rollout(msg, seq)]
            if mtype == "abort":
                self._stop_rollout()
                self.jog_velocity[:] = 0.0
                self.drag_target = None
                self.mode = "IDLE"
                return [self._ok(seq, {})]
            raise ProtocolError(f"unhandled type {mtype}", seq=seq)
        except ProtocolError as ex:
            self.out_seq += 1
            return [error_reply(self.out_seq, now, str(ex), ex.seq)]

    def _require_teleop(self, seq):
        if self.mode == "PASSIVE":
            raise ProtocolError("arm is PASSIVE: re-enable TELEOP mode first", seq=seq)
        if self.mode not in ("TELEOP", "RECORDING"):
            raise ProtocolError(f"command requires TELEOP mode, not {self.mode}", seq=seq)

    def _require_no_rollout(self, seq):
        if self.rollout is not None:
            raise ProtocolError("a rollout is active; abort it first", seq=seq)

    # --- tick loop ----------------------------------------------------------

    def tick(self) -> None:
        """Advance one control step; the only mutator of simulation state."""
        now = self.sim.state.time
        dt = self.sim.servo.dt
        if self.mode in ("TELEOP", "RECORDING"):
            if watchdog(self.filter, now) is WatchdogState.PASSIVE:
                if self.mode == "RECORDING":
                    self._abort_recording()
                self.mode = "PASSIVE"
                self.jog_velocity[:] = 0.0
                self.drag_target = None
        if self.mode in ("TELEOP", "RECORDING"):
            if np.any(self.jog_velocity != 0.0):
                self.raw_cmd = self.model.clamp(self.raw_cmd + self.jog_velocity * dt)
            elif self.drag_target is not None:
                res = solve_ik(self.model, self.sim.state.q, self.drag_target,
                               IkParams(max_iters=30))
                self.raw_cmd = res.q
            self.q_cmd = condition_command(self.filter, self.raw_cmd, dt)
        elif self.mode == "ROLLOUT_POLICY":
            self._tick_policy_rollout(now, dt)
        elif self.mode == "ROLLOUT_PLANNER":
            self._tick_planner_rollout(now, dt)
        # PASSIVE and IDLE apply no new commands: the arm holds the last one
        state = self.sim.step(self.q_cmd)
        if state.time >= self._next_feature_time:
            self._last_feature = render_features(self.scene, self.model, state.q)
            self._next_feature_time += 1.0 / FEATURE_RATE_HZ
            if self.recorder is not None:
                self.recorder["feature_times"].append(state.time)
                self.recorder["features"].append(self._last_feature.copy())
        if self.recorder is not None:
            self.recorder["joint_times"].append(state.time)
            self.recorder["joints"].append(state.q.copy())
        if self.rollout is not None:
            self.rollout["joint_times"].append(state.time)
            self.rollout["joints"].append(state.q.copy())
            if state.time >= self.rollout["next_feature"]:
                self.rollout["feature_times"].append(state.time)
                self.rollout["features"].append(self._last_feature.copy())
                self.rollout["next_feature"] += 1.0 / FEATURE_RATE_HZ
            if state.time >= self.rollout["deadline"] or (
                self.rollout["kind"] == "planner"
                and state.time >= self.rollout["traj"].times[-1] + 1.0
            ):
                self._finish_rollout()

    # --- recording -----------------------------------------------------------

    def _finish_recording(self, seq) -> str:
        if self.mode != "RECORDING" or self.recorder is None:
            raise ProtocolError("no recording in progress", seq=seq)
        rec = self.recorder
        self.recorder = None
        self.mode = "TELEOP"
        duration = self.sim.state.time - rec["t0"]
        if duration < self.config.min_recording_s or len(rec["features"]) == 0:
            raise ProtocolError(
                f"recording too short ({duration:.2f} s < {self.config.min_recording_s} s)",
                seq=seq,
            )
        eid = f"teleop-{uuid.uuid4().hex[:8]}"
        episode = Episode(
            id=eid,
            scene=scene_to_dict(self.scene),
            joint_times=np.array(rec["joint_times"]),
            joints=np.stack(rec["joints"]),
            feature_times=np.array(rec["feature_times"]),
            features=np.stack(rec["features"]),
            goal=rec["features"][-1].copy(),
            provenance="TELEOP",
            obstacle=self.scene.obstacle_present,
        )
        self.config.data_dir.mkdir(parents=True, exist_ok=True)
        path = self.config.data_dir / f"{eid}.cep"
        save_episode(episode, path)
        return self._ok(seq, {
            "episode_id": eid,
            "file": str(path),
            "joint_samples": len(episode.joints),
            "feature_samples": len(episode.features),
        })

    def _abort_recording(self) -> None:
        self.recorder = None
        self.events.append({"kind": "recording_aborted", "reason": "watchdog"})

    def _goal_preview(self, feat: np.ndarray) -> dict:
        return {
            "target_uv": [feat[0], feat[1]],
            "target_visible": bool(feat[4] == 1.0),
            "srr_box": 0.5,
            "fiducials_uv": [[feat[9], feat[10]], [feat[11], feat[12]], [feat[13], feat[14]]],
        }

    # --- rollouts ---------------------------------------------------------------

    def _start_policy_rollout(self, msg, seq) -> str:
        if self.mode not in ("IDLE", "TELEOP"):
            raise ProtocolError(f"cannot start a rollout from {self.mode}", seq=seq)
        self._require_no_rollout(seq)
        if self.goal_feature is None:
            raise ProtocolError("no goal captured", seq=seq)
        ckpt = msg["payload"]["checkpoint"]
        try:
            params, header = load_checkpoint(ckpt)
        except (OSError, ValueError) as ex:
            raise ProtocolError(f"checkpoint: {ex}", seq=seq) from ex
        duration = float(msg["payload"].get("duration", 15.0))
        trial_id = f"policy-{uuid.uuid4().hex[:8]}"
        self.rollout = self._new_rollout("policy", trial_id, duration)
        self.rollout["controller"] = DeployController(
            params, self.goal_feature,
            DeployConfig(rate_hz=self.config.policy_rate_hz),
        )
        self.rollout["ticks_per_cmd"] = int(round(
            self.config.control_rate_hz / self.config.policy_rate_hz))
        self.rollout["tick_count"] = 0
        self.mode = "ROLLOUT_POLICY"
        return self._ok(seq, {"trial_id": trial_id})

    def _start_planner_rollout(self, msg, seq) -> str:
        if self.mode not in ("IDLE", "TELEOP"):
            raise ProtocolError(f"cannot start a rollout from {self.mode}", seq=seq)
        self._require_no_rollout(seq)
        payload = msg["payload"]
        if "q_goal" not in payload:
            raise ProtocolError("rollout_planner requires a q_goal configuration", seq=seq)
        q_goal = np.asarray(payload["q_goal"], dtype=float)
        params = PlannerParams(seed=int(payload.get("seed", 0)))
        try:
            path = plan_rrt_star(self.model, self.scene, self.sim.state.q, q_goal, params)
        except ValueError as ex:
            raise ProtocolError(f"planner: {ex}", seq=seq) from ex
        if path is None:
            raise ProtocolError("planner found no solution", seq=seq)
        path = shortcut_path(path, self.model, self.scene, params)
        traj = time_parameterize(path, self.model,
                                 rate_hz=self.config.control_rate_hz, speed_scale=0.05)
        trial_id = f"planner-{uuid.uuid4().hex[:8]}"
        self.rollout = self._new_rollout("planner", trial_id, traj.times[-1] + 2.0)
        self.rollout["traj"] = traj
        self.rollout["t0"] = self.sim.state.time
        self.mode = "ROLLOUT_PLANNER"
        return self._ok(seq, {"trial_id": trial_id, "plan_cost": path.cost,
                              "duration": traj.times[-1]})

    def _new_rollout(self, kind: str, trial_id: str, duration: float) -> dict:
        return {
            "kind": kind, "id": trial_id,
            "deadline": self.sim.state.time + duration,
            "joint_times": [], "joints": [],
            "feature_times": [], "features": [],
            "next_feature": self.sim.state.time,
            "goal": None if self.goal_feature is None else self.goal_feature.copy(),
        }

    def _tick_policy_rollout(self, now: float, dt: float) -> None:
        r = self.rollout
        if r["tick_count"] % r["ticks_per_cmd"] == 0:
            decision = r["controller"].observe(self._last_feature, self.sim.state.q, now)
            if decision.command is not None:
                self.q_cmd = condition_command(self.filter, decision.command, dt, now=now)
        r["tick_count"] += 1

    def _tick_planner_rollout(self, now: float, dt: float) -> None:
        r = self.rollout
        target = r["traj"].sample(now - r["t0"])
        self.q_cmd = condition_command(self.filter, target, dt, now=now)

    def _finish_rollout(self) -> None:
        r = self.rollout
        self.rollout = None
        self.mode = "IDLE"
        goal = r["goal"] if r["goal"] is not None else np.zeros(16)
        record = TrialRecord(
            method=r["kind"], task="SERVICE", seed=0,
            joint_times=np.array(r["joint_times"]), joints=np.stack(r["joints"]),
            feature_times=np.array(r["feature_times"]),
            features=np.stack(r["features"]) if r["features"] else np.zeros((1, 16)),
            goal=goal, collided=self.sim.state.collided,
            dropout_flagged=bool(r.get("controller") and r["controller"].dropout_flagged),
        )
        self.config.data_dir.mkdir(parents=True, exist_ok=True)
        path = self.config.data_dir / f"{r['id']}.ctr"
        save_record(record, path)
        self.events.append({"kind": "rollout_finished", "trial_id": r["id"],
                            "file": str(path), "collided": self.sim.state.collided})

    def _stop_rollout(self) -> None:
        if self.rollout is not None:
            self._finish_rollout()

    # --- outbound frames -------------------------------------------------------

    def state_frame(self) -> str:
        self.out_seq += 1
        state = self.sim.state
        ee, links = forward_kinematics(self.model, state.q)
        payload = {
            "q": state.q.tolist(),
            "qdot": state.qdot.tolist(),
            "sim_time": state.time,
            "mode": self.mode,
            "collided": bool(state.collided),
            "recording": self.recorder is not None,
            "goal_set": self.goal_feature is not None,
            "features": self._last_feature.tolist(),
            "ee": {"position": ee.position.tolist(), "orientation": ee.orientation.tolist()},
            "links": [
                {"position": lp.position.tolist(), "orientation": lp.orientation.tolist()}
                for lp in links
            ],
            "capsules": self._capsule_payload(),
        }
        return encode("state", self.out_seq, state.time, payload)

    def _capsule_payload(self) -> list:
        from .world import link_capsules

        w0, w1, radii, _ = link_capsules(self.model, self.sim.state.q)
        return [
            {"p0": a.tolist(), "p1": b.tolist(), "radius": float(r)}
            for a, b, r in zip(w0, w1, radii)
        ]

    def drain_events(self) -> list[str]:
        out = []
        for ev in self.events:
            self.out_seq += 1
            out.append(encode("event", self.out_seq, self.sim.state.time, ev))
        self.events.clear()
        return out

    def _ok(self, reply_to: int, payload: dict) -> str:
        self.out_seq += 1
        return encode("ok", self.out_seq, self.sim.state.time,
                      {"reply_to": reply_to, **payload})

    def _reply(self, mtype: str, payload: dict) -> str:
        self.out_seq += 1
        return encode(mtype, self.out_seq, self.sim.state.time, payload)


async def serve(
    model: RobotModel,
    scene: Scene,
    host: str = "127.0.0.1",
    port: int = 8765,
    servo: ServoModel = ServoModel(),
    config: ServiceConfig = ServiceConfig(),
    virtual_time: bool = False,
    seed: int | None = None,
    ready: asyncio.Event | None = None,
    stop: asyncio.Event | None = None,
) -> None:
    """Run the websocket service until stop is set (or forever)."""
    import websockets

    session = SimSession(model, scene, servo, config, seed=seed)
    clients: set = set()
    lock = asyncio.Lock()

    async def handler(ws):
        clients.add(ws)
        try:
            async for raw in ws:
                try:
                    msg = decode_client(raw)
                except ProtocolError as ex:
                    session.out_seq += 1
                    await ws.send(error_reply(session.out_seq, session.sim.state.time,
                                              str(ex), ex.seq))
                    continue
                async with lock:
                    replies = session.handle_message(msg)
                for reply in replies:
                    await ws.send(reply)
        finally:
            clients.discard(ws)

    async def broadcast(frame: str):
        dead = []
        for ws in clients:
            try:
                await ws.send(frame)
            except Exception:
                dead.append(ws)
        for ws in dead:
            clients.discard(ws)

    async def tick_loop():
        dt = 1.0 / config.control_rate_hz
        per_frame = max(1, int(round(config.control_rate_hz / config.broadcast_hz)))
        k = 0
        next_wall = time.monotonic()
        while stop is None or not stop.is_set():
            async with lock:
                session.tick()
                frames = session.drain_events()
                if k % per_frame == 0:
                    frames.append(session.state_frame())
            for frame in frames:
                await broadcast(frame)
            k += 1
            if virtual_time:
                await asyncio.sleep(0)  # yield so client I/O interleaves every tick
            else:
                next_wall += dt
                delay = next_wall - time.monotonic()
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    next_wall = time.monotonic()
                    await asyncio.sleep(0)

    server = await websockets.serve(handler, host, port)
    if ready is not None:
        ready.set()
    task = asyncio.create_task(tick_loop())
    try:
        if stop is not None:
            await stop.wait()
        else:
            await asyncio.Future()
    finally:
        task.cancel()
        server.close()
        await server.wait_closed()
