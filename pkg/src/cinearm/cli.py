"""Batch entry points: dataset collection, training, evaluation, planning,
replay, benchmarking, and the teleoperation service.

Every output artifact embeds (schema_version, config_hash, seed) so re-runs
with the same triple reproduce identical numeric payloads.
"""
from __future__ import annotations

import asyncio
import json
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from .arm import default_robot_model, load_robot_model
from .bench import (
    DeployConfig,
    PlannerParams,
    build_trial_spec,
    evaluate_record,
    aggregate,
    render_table,
    run_benchmark,
    run_expert_trial,
    run_planner_trial,
    run_policy_trial,
)
from .collect import collect_dataset, make_training_clips
from .data import FEATURE_RATE_HZ, Episode, config_hash, load_episode, load_manifest, save_episode
from .metrics import tracking_rmse
from .planner import plan_rrt_star, shortcut_path, time_parameterize
from .policy import PolicyConfig
from .service import ServiceConfig, serve
from .training import TrainConfig, load_checkpoint, save_checkpoint, train
from .world import ServoModel, SimWorld, default_scene, load_scene, render_features, scene_to_dict

SCHEMA_VERSION = 1


def _load_run_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _model_from(cfg: dict):
    ref = cfg.get("model", "default")
    return default_robot_model() if ref == "default" else load_robot_model(ref)


def _scene_from(cfg: dict, obstacle: bool):
    key = "scene_obstacle" if obstacle else "scene_free"
    ref = cfg.get(key, "default")
    return default_scene(obstacle=obstacle) if ref == "default" else load_scene(ref)


def _stamp(payload: dict, seed: int, cfg: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "config_hash": config_hash(cfg),
        **payload,
    }


@click.group()
def main():
    """Desk-scale cinema arm toolkit."""


@main.command()
@click.option("--n", "n_episodes", default=40, show_default=True)
@click.option("--noise", "noise_sigma", default=2e-3, show_default=True)
@click.option("--mode", type=click.Choice(["balanced", "free", "obstacle"]), default="balanced",
              show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def collect(n_episodes, noise_sigma, mode, config_path, seed, out):
    """Generate scripted push-in demonstration episodes."""
    cfg = _load_run_config(config_path)
    model = _model_from(cfg)
    manifest = collect_dataset(
        model,
        _scene_from(cfg, obstacle=False),
        _scene_from(cfg, obstacle=True),
        out,
        n_episodes=n_episodes,
        noise_sigma=noise_sigma,
        obstacle_mode=mode,
        seed=seed,
    )
    counts = {}
    for e in manifest.entries:
        counts[e["split"]] = counts.get(e["split"], 0) + 1
    click.echo(f"wrote {n_episodes} episodes to {out} (splits: {counts})")


@main.command(name="train")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--ablation", type=click.Choice(["INCREMENTAL_ACTION", "RGB_ONLY", "NO_PROPRIO"]),
              default=None)
@click.option("--epochs", default=None, type=int)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def train_cmd(manifest_path, ablation, epochs, config_path, seed, out):
    """Train the policy (or an ablation variant) from a dataset manifest."""
    cfg = _load_run_config(config_path)
    model = _model_from(cfg)
    manifest = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    episodes = {s: manifest.episodes_for(s, base) for s in ("train", "val")}
    pcfg = PolicyConfig(**cfg.get("policy", {}))
    if ablation:
        pcfg = pcfg.for_ablation(ablation)
    tcfg_kw = dict(cfg.get("train", {}))
    tcfg_kw["seed"] = seed
    if epochs is not None:
        tcfg_kw["epochs"] = epochs
    tcfg = TrainConfig(**tcfg_kw)
    augment = int(cfg.get("augment", 3))
    train_clips = make_training_clips(episodes["train"], model, augment=augment, seed=seed)
    val_clips = make_training_clips(episodes["val"], model, augment=0, seed=seed)
    click.echo(f"training on {len(train_clips)} clips ({len(val_clips)} val)")
    params, history = train(
        train_clips, val_clips, pcfg, tcfg,
        log=lambda r: click.echo(
            f"  epoch {r['epoch']:4d}  train {r['train_loss']:.4f}"
            + (f"  val {r['val_loss']:.4f}" if "val_loss" in r else "")
        ) if r["epoch"] % 25 == 0 else None,
    )
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, tcfg, out)
    hist_path = out.with_suffix(".history.json")
    hist_path.write_text(json.dumps(
        _stamp({"history": history, "ablation": ablation}, seed,
               {"policy": asdict(pcfg), "train": asdict(tcfg)}),
        sort_keys=True, indent=1,
    ))
    click.echo(f"checkpoint: {out}")


def _method_runner(name: str, checkpoint: str | None, cfg: dict):
    if name == "expert":
        noise = float(cfg.get("collect", {}).get("noise_sigma", 2e-3))
        return lambda model, scene, spec: run_expert_trial(model, scene, spec, noise_sigma=noise)
    if name == "planner":
        params = PlannerParams(**cfg.get("planner", {}))
        return lambda model, scene, spec: run_planner_trial(model, scene, spec, params)
    if name == "policy":
        if checkpoint is None:
            raise click.UsageError("--checkpoint is required for the policy method")
        params, _ = load_checkpoint(checkpoint)
        deploy = DeployConfig(**cfg.get("deploy", {}))
        return lambda model, scene, spec: run_policy_trial(model, scene, spec, params, deploy)
    raise click.UsageError(f"unknown method {name}")


@main.command(name="eval")
@click.option("--method", type=click.Choice(["policy", "expert", "planner"]), required=True)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--task", type=click.Choice(["PUSH_IN_FREE", "PUSH_IN_OBSTACLE", "both"]),
              default="both", show_default=True)
@click.option("--trials", default=10, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def eval_cmd(method, checkpoint, task, trials, config_path, seed, out):
    """Evaluate one method over seeded trials and write a metric report."""
    cfg = _load_run_config(config_path)
    model = _model_from(cfg)
    scenes = {
        "PUSH_IN_FREE": _scene_from(cfg, obstacle=False),
        "PUSH_IN_OBSTACLE": _scene_from(cfg, obstacle=True),
    }
    tasks = ("PUSH_IN_FREE", "PUSH_IN_OBSTACLE") if task == "both" else (task,)
    report = run_benchmark(
        model, scenes, {method: _method_runner(method, checkpoint, cfg)},
        tasks=tasks, n_trials=trials, base_seed=seed, out_dir=out,
    )
    stamped = _stamp(report, seed, {"method": method, "tasks": tasks, "trials": trials})
    (Path(out) / "report.json").write_text(json.dumps(stamped, sort_keys=True, indent=1))
    click.echo(render_table(report["aggregate"]))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True),
              help="full-policy checkpoint")
@click.option("--ablation", "ablations", multiple=True,
              help="name=checkpoint pairs for ablation rows")
@click.option("--with-expert/--no-expert", default=True, show_default=True)
@click.option("--with-planner/--no-planner", default=True, show_default=True)
@click.option("--trials", default=10, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--plot", is_flag=True, help="emit SVG metric plots (requires matplotlib)")
def bench(checkpoint, ablations, with_expert, with_planner, trials, config_path, seed, out, plot):
    """Comparison benchmark across methods and tasks."""
    cfg = _load_run_config(config_path)
    model = _model_from(cfg)
    scenes = {
        "PUSH_IN_FREE": _scene_from(cfg, obstacle=False),
        "PUSH_IN_OBSTACLE": _scene_from(cfg, obstacle=True),
    }
    methods = {}
    if with_expert:
        methods["expert"] = _method_runner("expert", None, cfg)
    if with_planner:
        methods["planner"] = _method_runner("planner", None, cfg)
    methods["policy"] = _method_runner("policy", checkpoint, cfg)
    for spec_str in ablations:
        name, _, path = spec_str.partition("=")
        if not path:
            raise click.UsageError("--ablation expects name=checkpoint")
        methods[f"ablation:{name}"] = _method_runner("policy", path, cfg)
    report = run_benchmark(model, scenes, methods, n_trials=trials, base_seed=seed, out_dir=out)
    stamped = _stamp(report, seed, {"methods": sorted(methods), "trials": trials})
    (Path(out) / "report.json").write_text(json.dumps(stamped, sort_keys=True, indent=1))
    click.echo(render_table(report["aggregate"]))
    if plot:
        _emit_plots(report, Path(out))
        click.echo(f"plots under {out}")


def _emit_plots(report: dict, out_dir: Path) -> None:
    try:
        import matplotlib
    except ImportError as ex:
        raise click.UsageError("plotting requires the 'plot' extra (matplotlib)") from ex
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    agg = report["aggregate"]
    metrics = [("success_pct", "Success %"), ("s_vis", "Visual alignment"),
               ("jerk", "Cartesian jerk (m/s^3)"), ("srr_pct", "SRR %")]
    for key, label in metrics:
        fig, ax = plt.subplots(figsize=(7, 3.2))
        methods = sorted(agg)
        tasks = sorted({t for m in agg for t in agg[m]})
        width = 0.8 / len(tasks)
        for ti, task in enumerate(tasks):
            vals = [agg[m].get(task, {}).get(key, float("nan")) for m in methods]
            ax.bar(np.arange(len(methods)) + ti * width, vals, width, label=task)
        ax.set_xticks(np.arange(len(methods)) + 0.4 - width / 2)
        ax.set_xticklabels(methods, rotation=15, ha="right", fontsize=8)
        ax.set_ylabel(label)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out_dir / f"bar_{key}.svg", metadata={"Date": None})
        plt.close(fig)


@main.command()
@click.option("--task", type=click.Choice(["PUSH_IN_FREE", "PUSH_IN_OBSTACLE"]),
              default="PUSH_IN_OBSTACLE", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="write the planned trajectory as a replayable episode file")
def plan(task, config_path, seed, out):
    """Plan one seeded trial with the classical baseline and report the cost."""
    cfg = _load_run_config(config_path)
    model = _model_from(cfg)
    scene = _scene_from(cfg, obstacle=task == "PUSH_IN_OBSTACLE")
    params = PlannerParams(seed=seed, **{k: v for k, v in cfg.get("planner", {}).items()
                                         if k != "seed"})
    spec = build_trial_spec(model, scene, task, seed=seed)
    from .bench import margin_clear_goal
    from .world import in_collision

    q_goal = spec.q_goal
    if in_collision(model, q_goal, scene, margin=params.safety_margin):
        q_goal = margin_clear_goal(model, scene, spec, params.safety_margin)
        if q_goal is None:
            click.echo("no margin-clear goal reachable", err=True)
            sys.exit(1)
    path = plan_rrt_star(model, scene, spec.q_start, q_goal, params)
    if path is None:
        click.echo("planning failed", err=True)
        sys.exit(1)
    short = shortcut_path(path, model, scene, params)
    click.echo(f"plan: {len(path.waypoints)} waypoints, cost {path.cost:.3f} rad; "
               f"after shortcut {len(short.waypoints)} waypoints, cost {short.cost:.3f} rad")
    if out:
        traj = time_parameterize(short, model, rate_hz=200.0, speed_scale=0.05)
        n_feat = int(np.floor(traj.times[-1] * FEATURE_RATE_HZ)) + 1
        ftimes = np.arange(n_feat) / FEATURE_RATE_HZ
        feats = np.stack([render_features(scene, model, traj.sample(t)) for t in ftimes])
        episode = Episode(
            id=f"plan-{task}-{seed}",
            scene=scene_to_dict(scene),
            joint_times=traj.times, joints=traj.positions,
            feature_times=ftimes, features=feats, goal=feats[-1],
            provenance="POLICY", obstacle=scene.obstacle_present,
        )
        save_episode(episode, out)
        click.echo(f"trajectory written to {out}")


@main.command()
@click.argument("episode_path", type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
def replay(episode_path, seed):
    """Replay a recorded episode through the servo and report tracking error."""
    episode = load_episode(episode_path)
    from .world import scene_from_dict
    from .arm import fk_batch

    scene = scene_from_dict(episode.scene)
    model = default_robot_model()
    sim = SimWorld(model, scene, ServoModel(), seed=seed)
    sim.reset(episode.joints[0])
    executed = np.empty_like(episode.joints)
    for i in range(len(episode.joints)):
        executed[i] = sim.step(episode.joints[i]).q
    _, _, _, ref_p = fk_batch(model, episode.joints)
    _, _, _, exe_p = fk_batch(model, executed)
    rmse, mx = tracking_rmse(episode.joint_times, ref_p, episode.joint_times, exe_p)
    click.echo(f"replay RMSE {rmse * 100:.2f} cm, max {mx * 100:.2f} cm, "
               f"collided={sim.state.collided}")
    sys.exit(0 if rmse < 0.02 and not sim.state.collided else 1)


@main.command(name="serve")
@click.option("--port", default=8765, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None)
@click.option("--rate", default=30.0, show_default=True, help="state broadcast rate, Hz")
@click.option("--virtual-time", is_flag=True, help="run the sim as fast as possible")
@click.option("--seed", default=0, show_default=True)
def serve_cmd(port, host, model_path, scene_path, rate, virtual_time, seed):
    """Run the teleoperation service."""
    model = load_robot_model(model_path) if model_path else default_robot_model()
    scene = load_scene(scene_path) if scene_path else default_scene(obstacle=True)
    config = ServiceConfig(broadcast_hz=rate)
    click.echo(f"serving on ws://{host}:{port} (virtual_time={virtual_time})")
    asyncio.run(serve(model, scene, host=host, port=port, config=config,
                      virtual_time=virtual_time, seed=seed))


if __name__ == "__main__":
    main()
