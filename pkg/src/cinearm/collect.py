"""Synthetic demonstration collection: scripted push-in episodes on disk.

Episodes record the scripted joint stream at 200 Hz and rendered camera
features at 30 Hz, with the final frame as the goal. Generation failures
(IK breakdown, collision) retry with a fresh start pose, bounded per episode.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .arm import RobotModel
from .data import (
    FEATURE_RATE_HZ,
    POLICY_RATE_HZ,
    Clip,
    Episode,
    Manifest,
    config_hash,
    save_episode,
    save_manifest,
    slice_clips,
    split_episodes,
)
from .planner import (
    ExpertStyle,
    ScriptedExpertError,
    sample_start_config,
    scripted_push_in,
)
from .world import Scene, render_features, scene_from_dict, scene_to_dict


def arc_side_for(scene: Scene, model: RobotModel, q_start: np.ndarray) -> ExpertStyle:
    """Deterministic avoidance side: arc away on the side the camera already
    favors, so the style is a function of the start geometry (keeps the
    demonstration distribution unimodal given the observation)."""
    from .arm import forward_kinematics

    p0 = forward_kinematics(model, q_start)[0].position
    chord = scene.target_pos - p0
    lateral = np.cross([0.0, 0.0, 1.0], chord / max(np.linalg.norm(chord), 1e-9))
    offset = float(np.dot(p0 - scene.target_pos, lateral))
    return ExpertStyle.ARC_LEFT if offset >= 0.0 else ExpertStyle.ARC_RIGHT


def synthesize_episode(
    model: RobotModel,
    scene: Scene,
    eid: str,
    style: ExpertStyle | None,
    noise_sigma: float,
    seed: int,
    max_attempts: int = 40,
) -> Episode:
    """One scripted demonstration; retries new starts on generation failure.

    style None picks the task-natural style: DIRECT in free scenes, the
    geometry-determined arc side in obstacle scenes.
    """
    rng = np.random.default_rng(seed)
    last_error: Exception | None = None
    for attempt in range(max_attempts):
        try:
            q_start = sample_start_config(model, scene, rng)
            ep_style = style
            if ep_style is None:
                ep_style = (arc_side_for(scene, model, q_start)
                            if scene.obstacle_present else ExpertStyle.DIRECT)
            traj, q_goal = scripted_push_in(
                model, scene, q_start, ep_style,
                noise_sigma=noise_sigma,
                seed=int(rng.integers(0, 2**31)),
            )
        except ScriptedExpertError as ex:
            last_error = ex
            continue
        episode = _record_executed(model, scene, eid, traj, seed=int(rng.integers(0, 2**31)))
        if episode is None:
            last_error = ScriptedExpertError("executed trajectory collided")
            continue
        return episode, ep_style
    raise ScriptedExpertError(
        f"episode {eid}: no valid demonstration in {max_attempts} attempts ({last_error})"
    )


def _record_executed(model: RobotModel, scene: Scene, eid: str, traj, seed: int) -> Episode | None:
    """Drive the scripted trajectory through the command conditioner and
    servo, recording the executed state stream - the same pathway teleop
    recording uses, so demonstrations carry realistic actuation lag."""
    from .control import CommandFilter, condition_command
    from .world import ServoModel, SimWorld

    servo = ServoModel()
    sim = SimWorld(model, scene, servo, seed=seed)
    sim.reset(traj.positions[0])
    filt = CommandFilter()
    filt.reset(traj.positions[0])
    n = len(traj.times)
    joints = np.empty((n, 6))
    feat_times, feats = [], []
    next_feat = 0.0
    for k in range(n):
        cmd = condition_command(filt, traj.positions[k], servo.dt)
        state = sim.step(cmd)
        joints[k] = state.q
        if state.time >= next_feat:
            feat_times.append(state.time)
            feats.append(render_features(scene, model, state.q))
            next_feat += 1.0 / FEATURE_RATE_HZ
    if sim.state.collided:
        return None
    return Episode(
        id=eid,
        scene=scene_to_dict(scene),
        joint_times=traj.times + servo.dt,
        joints=joints,
        feature_times=np.array(feat_times),
        features=np.stack(feats),
        goal=feats[-1].copy(),
        provenance="SCRIPTED",
        obstacle=scene.obstacle_present,
    )


DEFAULT_JITTER = np.array([0.01, 0.01, 0.01, 0.03, 0.04, 0.04])
OBS_DELAY_MAX_S = 0.50   # simulated observation staleness during augmentation


def make_training_clips(
    episodes: list[Episode],
    model: RobotModel,
    augment: int = 0,
    seed: int = 0,
    S: int = 8,
    H: int = 15,
    policy_rate_hz: float = POLICY_RATE_HZ,
    jitter_sigma: np.ndarray | float | None = None,
    warp_range: tuple[float, float] = (1.0, 1.0),
    phases: int = 1,
) -> list[Clip]:
    """Canonical sliding-window clips plus robustness-augmented variants.

    Each augmented clip perturbs the observation history the way deployment
    drift does: per-joint jitter (wrist-weighted by default, so near-edge and
    lost-subject framings appear in training) with features re-rendered to
    match, and optionally time-warped history taps. Future labels keep the
    original demonstration continuation, so the supervision is
    self-correcting.
    """
    if jitter_sigma is None:
        jitter_sigma = DEFAULT_JITTER
    jitter_sigma = np.broadcast_to(np.asarray(jitter_sigma, dtype=float), (6,))
    clips: list[Clip] = []
    rng = np.random.default_rng(seed)
    for ep in episodes:
        base = slice_clips(ep, S=S, H=H, policy_rate_hz=policy_rate_hz)
        clips.extend(base)
        for k in range(1, phases):
            clips.extend(slice_clips(ep, S=S, H=H, policy_rate_hz=policy_rate_hz,
                                     phase_s=k / (phases * policy_rate_hz)))
        if augment <= 0 or not base:
            continue
        scene = scene_from_dict(ep.scene)
        t0 = ep.joint_times[0]
        duration = ep.duration

        def joints_at(t):
            t = np.clip(t, 0.0, duration)
            out = np.empty(6)
            for j in range(6):
                out[j] = np.interp(t0 + t, ep.joint_times, ep.joints[:, j])
            return out

        for clip in base:
            anchor_t = (clip.offset + S - 1) / policy_rate_hz
            for _ in range(augment):
                warp = rng.uniform(*warp_range)
                # occasional heavy tier: covers lost-subject framings so the
                # policy learns to re-acquire, not just to fine-correct
                scale = rng.choice([0.5, 1.0, 2.0, 6.0], p=[0.3, 0.3, 0.25, 0.15])
                # observation staleness: history lags the label anchor the way
                # the servo/filter chain lags at deployment
                delay = rng.uniform(0.0, OBS_DELAY_MAX_S)
                hist_ts = anchor_t - delay - warp * (S - 1 - np.arange(S)) / policy_rate_hz
                joints = np.stack([joints_at(t) for t in hist_ts])
                # drift-like perturbation: a random walk, not white noise, so
                # consecutive history taps stay kinematically plausible
                walk = np.cumsum(rng.normal(0.0, 1.0, size=joints.shape), axis=0)
                walk /= np.sqrt(np.arange(1, len(walk) + 1))[:, None]
                joints = joints + walk * (scale * jitter_sigma)
                feats = np.stack([render_features(scene, model, q) for q in joints])
                clips.append(
                    Clip(
                        obs_features=feats,
                        obs_joints=joints,
                        goal=clip.goal.copy(),
                        future=clip.future.copy(),
                        episode_id=ep.id,
                        offset=clip.offset,
                    )
                )
    return clips


def collect_dataset(
    model: RobotModel,
    scene_free: Scene,
    scene_obstacle: Scene,
    out_dir: str | Path,
    n_episodes: int,
    styles: list[ExpertStyle] | None = None,
    noise_sigma: float = 0.0,
    obstacle_mode: str = "balanced",   # balanced | free | obstacle
    seed: int = 0,
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> Manifest:
    """Generate n episodes, write them + a manifest under out_dir.

    balanced mode alternates free/obstacle scenes; obstacle episodes avoid
    the DIRECT style (it tends to drive through the box). Fewer than 3
    episodes degenerate to a train-only split.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    episodes = []
    entries = []
    for i in range(n_episodes):
        if obstacle_mode == "balanced":
            with_obstacle = i % 2 == 1
        else:
            with_obstacle = obstacle_mode == "obstacle"
        scene = scene_obstacle if with_obstacle else scene_free
        if styles:
            pool = [s for s in styles if not (with_obstacle and s is ExpertStyle.DIRECT)] or styles
            style = pool[int(rng.integers(0, len(pool)))]
        else:
            style = None  # task-natural: DIRECT in free scenes, geometry-arc otherwise
        eid = f"ep{i:04d}"
        episode, used_style = synthesize_episode(
            model, scene, eid, style, noise_sigma, seed=int(rng.integers(0, 2**31))
        )
        fname = f"{eid}.cep"
        save_episode(episode, out_dir / fname)
        episodes.append(episode)
        entries.append({
            "file": fname,
            "id": eid,
            "obstacle": with_obstacle,
            "provenance": "SCRIPTED",
            "style": used_style.value,
        })

    if n_episodes >= 3:
        train, val, test = split_episodes(episodes, ratios=split_ratios, seed=seed)
        split_of = {e.id: "train" for e in train}
        split_of.update({e.id: "val" for e in val})
        split_of.update({e.id: "test" for e in test})
    else:
        split_of = {e.id: "train" for e in episodes}
    for entry in entries:
        entry["split"] = split_of[entry["id"]]

    manifest = Manifest(
        seed=seed,
        config_hash=config_hash({
            "n": n_episodes,
            "styles": [s.value for s in styles] if styles else "auto",
            "noise": noise_sigma,
            "mode": obstacle_mode,
            "scene_free": scene_to_dict(scene_free),
            "scene_obstacle": scene_to_dict(scene_obstacle),
        }),
        entries=entries,
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
