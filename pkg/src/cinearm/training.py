"""Policy training: AdamW, the epoch loop, and checkpoint files.

Checkpoints are single-file containers like episodes: magic line, JSON
header (policy config, train config, normalization buffer shapes, tensor
name/shape table, config hash), then raw little-endian float64 blocks.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Clip, config_hash
from .policy import (
    PolicyConfig,
    PolicyParams,
    TrainingError,
    backward,
    encode_style,
    init_params,
    sample_z,
    set_normalization,
    total_loss,
)

CHECKPOINT_MAGIC = b"CINEARM-CHECKPOINT v1\n"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    epochs: int = 100
    beta: float = 0.01           # KL weight
    lambda_smooth: float = 0.01
    weight_decay: float = 1e-4
    seed: int = 0
    lr_decay: str = "cosine"     # cosine to 10% over the run, or "none"

    def __post_init__(self):
        if self.beta < 0 or self.lambda_smooth < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lr_decay not in ("cosine", "none"):
            raise ValueError("lr_decay must be 'cosine' or 'none'")

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay == "none" or self.epochs <= 1:
            return self.learning_rate
        frac = epoch / max(self.epochs - 1, 1)
        return self.learning_rate * (0.1 + 0.9 * 0.5 * (1 + np.cos(np.pi * frac)))


class AdamW:
    """Decoupled-weight-decay adaptive-moment optimizer."""

    def __init__(self, lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.wd = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: PolicyParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            data = params.tensors[name].data
            data -= self.lr * ((m / b1t) / (np.sqrt(v / b2t) + self.eps) + self.wd * data)


def clips_to_arrays(clips: list[Clip], config: PolicyConfig) -> dict[str, np.ndarray]:
    """Stack clips into batch arrays and build training labels.

    Default (absolute, with proprioception) labels are chunk offsets from the
    last observed joint state; the model re-adds the anchor so predictions
    stay absolute joints. Incremental labels are per-step deltas, the first
    relative to the last observed state. Proprio-free variants regress the
    raw absolute future.
    """
    obs_features = np.stack([c.obs_features for c in clips])
    obs_joints = np.stack([c.obs_joints for c in clips])
    goal = np.stack([c.goal for c in clips])
    future = np.stack([c.future for c in clips])
    if config.incremental:
        prev = np.concatenate([obs_joints[:, -1:, :], future[:, :-1, :]], axis=1)
        labels = future - prev
    elif config.use_proprio:
        labels = future - obs_joints[:, -1:, :]
    else:
        labels = future
    return {
        "obs_features": obs_features,
        "obs_joints": obs_joints,
        "goal": goal,
        "labels": labels,
    }


def _slice_batch(arrays: dict, idx: np.ndarray) -> dict:
    return {k: v[idx] for k, v in arrays.items()}


def _eval_loss(params: PolicyParams, arrays: dict, cfg: TrainConfig,
               rng: np.random.Generator, chunk: int = 256) -> float:
    n = len(arrays["labels"])
    total = 0.0
    for i in range(0, n, chunk):
        batch = _slice_batch(arrays, np.arange(i, min(i + chunk, n)))
        mu, logvar = encode_style(params, batch["labels"])
        z = sample_z(mu, logvar, rng)
        loss, _ = total_loss(params, batch, z, cfg.beta, cfg.lambda_smooth, mu=mu, logvar=logvar)
        total += float(loss.data) * len(batch["labels"])
    return total / max(n, 1)


def train(
    train_clips: list[Clip],
    val_clips: list[Clip],
    policy_config: PolicyConfig = PolicyConfig(),
    train_config: TrainConfig = TrainConfig(),
    log=None,
) -> tuple[PolicyParams, list[dict]]:
    """Seeded training loop; keeps the checkpoint with the lowest validation
    loss; aborts on divergence returning the last good parameters."""
    if not train_clips:
        raise ValueError("empty training split")
    params = init_params(policy_config, seed=train_config.seed)
    train_arrays = clips_to_arrays(train_clips, policy_config)
    val_arrays = clips_to_arrays(val_clips, policy_config) if val_clips else None
    set_normalization(
        params, train_arrays["obs_features"], train_arrays["obs_joints"], train_arrays["labels"]
    )
    opt = AdamW(lr=train_config.learning_rate, weight_decay=train_config.weight_decay)
    rng = np.random.default_rng(train_config.seed)
    n = len(train_clips)
    history: list[dict] = []
    best_val = np.inf
    best_tensors = {k: t.data.copy() for k, t in params.tensors.items()}

    for epoch in range(train_config.epochs):
        opt.lr = train_config.lr_at(epoch)
        perm = rng.permutation(n)
        epoch_loss = 0.0
        comp_sum = {"mse": 0.0, "kl": 0.0, "smooth": 0.0}
        diverged = False
        for i in range(0, n, train_config.batch_size):
            idx = perm[i : i + train_config.batch_size]
            batch = _slice_batch(train_arrays, idx)
            mu, logvar = encode_style(params, batch["labels"])
            z = sample_z(mu, logvar, rng)
            try:
                grads, loss, comps = backward(
                    params, batch, z, train_config.beta, train_config.lambda_smooth,
                    mu=mu, logvar=logvar,
                )
            except TrainingError:
                diverged = True
                break
            opt.step(params, grads)
            epoch_loss += loss * len(idx)
            for k in comp_sum:
                comp_sum[k] += comps[k] * len(idx)
        if diverged:
            for k, t in params.tensors.items():
                t.data = best_tensors[k].copy()
            break
        record = {
            "epoch": epoch,
            "train_loss": epoch_loss / n,
            **{k: v / n for k, v in comp_sum.items()},
        }
        if val_arrays is not None:
            val_rng = np.random.default_rng([train_config.seed, 0xA1, epoch])
            record["val_loss"] = _eval_loss(params, val_arrays, train_config, val_rng)
            if record["val_loss"] < best_val:
                best_val = record["val_loss"]
                best_tensors = {k: t.data.copy() for k, t in params.tensors.items()}
        else:
            best_tensors = {k: t.data.copy() for k, t in params.tensors.items()}
        history.append(record)
        if log is not None:
            log(record)

    for k, t in params.tensors.items():
        t.data = best_tensors[k].copy()
    return params, history


# --- checkpoint I/O -------------------------------------------------------------

def save_checkpoint(params: PolicyParams, train_config: TrainConfig, path: str | Path) -> None:
    tensor_table = [[name, list(t.data.shape)] for name, t in sorted(params.tensors.items())]
    norm_table = [[name, list(np.asarray(v).shape)] for name, v in sorted(params.norm.items())]
    header = {
        "schema_version": 1,
        "policy_config": asdict(params.config),
        "train_config": asdict(train_config),
        "config_hash": config_hash({"policy": asdict(params.config), "train": asdict(train_config)}),
        "norm": norm_table,
        "tensors": tensor_table,
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write((json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode())
        for name, _ in norm_table:
            f.write(np.ascontiguousarray(params.norm[name], dtype="<f8").tobytes())
        for name, _ in tensor_table:
            f.write(np.ascontiguousarray(params.tensors[name].data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, dict]:
    with open(path, "rb") as f:
        if f.readline() != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        header = json.loads(f.readline().decode())
        cfg = PolicyConfig(**header["policy_config"])
        params = init_params(cfg, seed=0)
        for name, shape in header["norm"]:
            params.norm[name] = _read(f, shape)
        for name, shape in header["tensors"]:
            if name not in params.tensors:
                raise ValueError(f"checkpoint tensor {name!r} not in model")
            if list(params.tensors[name].data.shape) != shape:
                raise ValueError(f"checkpoint shape mismatch for {name!r}")
            params.tensors[name].data = _read(f, shape)
    return params, header


def _read(f, shape) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    buf = f.read(count * 8)
    arr = np.frombuffer(buf, dtype="<f8").copy()
    return arr.reshape(shape) if shape else arr[0]
