"""Goal-conditioned chunked-action policy with a latent style variable.

Per-timestep camera features and joint states are embedded by small MLPs and
fused into state tokens; a style token (projected latent z) and a goal token
bracket them as [Style, State x S, Goal]. A transformer encoder digests the
sequence and a decoder with H learned query slots emits the future joint
chunk through a linear head. A separate MLP encoder maps ground-truth future
trajectories to the latent's (mu, logvar) for training; at deployment z = 0.

All learnable weights live in a flat name -> Tensor dict so gradients,
checkpoints, and finite-difference checks can address every tensor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    d_z: int = 8
    ffn_mult: int = 4
    obs_horizon: int = 8       # S
    pred_horizon: int = 15     # H
    feature_dim: int = 16
    joint_dim: int = 6
    cvae_hidden: int = 64
    use_goal: bool = True
    use_proprio: bool = True
    incremental: bool = False  # predict per-step deltas instead of absolute joints

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    @staticmethod
    def full_scale() -> "PolicyConfig":
        """Published-scale hyperparameters (d=256, 8 heads, 4/4 layers, z=32)."""
        return PolicyConfig(d_model=256, n_heads=8, enc_layers=4, dec_layers=4,
                            d_z=32, cvae_hidden=256)

    def for_ablation(self, kind: str) -> "PolicyConfig":
        kind = kind.upper()
        if kind == "INCREMENTAL_ACTION":
            return replace(self, incremental=True)
        if kind == "RGB_ONLY":
            return replace(self, use_goal=False, use_proprio=False)
        if kind == "NO_PROPRIO":
            return replace(self, use_proprio=False)
        raise ValueError(f"unknown ablation {kind!r}")


@dataclass
class PolicyParams:
    config: PolicyConfig
    tensors: dict[str, Tensor]
    norm: dict[str, np.ndarray]  # feat/joint/label mean and std buffers

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def n_params(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def _sinusoidal(n_slots: int, d: int) -> np.ndarray:
    pos = np.arange(n_slots)[:, None]
    div = np.exp(np.arange(0, d, 2) / d * -math.log(10000.0))
    table = np.zeros((n_slots, d))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div[: table[:, 1::2].shape[1]])
    return table


def init_params(config: PolicyConfig, seed: int = 0) -> PolicyParams:
    rng = np.random.default_rng(seed)
    t: dict[str, Tensor] = {}

    def weight(name, fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        t[name] = Tensor(rng.uniform(-lim, lim, size=(fan_in, fan_out)), requires_grad=True)
        t[name + "_b"] = Tensor(np.zeros(fan_out), requires_grad=True)

    d = config.d_model
    weight("embed.feat.l1", config.feature_dim, d)
    weight("embed.feat.l2", d, d)
    if config.use_proprio:
        weight("embed.joint.l1", config.joint_dim, d)
        weight("embed.joint.l2", d, d)
    if config.use_goal:
        weight("embed.goal.l1", config.feature_dim, d)
        weight("embed.goal.l2", d, d)
    weight("style.proj", config.d_z, d)

    def attn_block(prefix):
        for part in ("wq", "wk", "wv", "wo"):
            weight(f"{prefix}.{part}", d, d)

    def ln_block(prefix):
        t[prefix + ".g"] = Tensor(np.ones(d), requires_grad=True)
        t[prefix + ".b"] = Tensor(np.zeros(d), requires_grad=True)

    def ffn_block(prefix):
        weight(prefix + ".l1", d, config.ffn_mult * d)
        weight(prefix + ".l2", config.ffn_mult * d, d)

    for i in range(config.enc_layers):
        attn_block(f"enc{i}.attn")
        ln_block(f"enc{i}.ln1")
        ffn_block(f"enc{i}.ffn")
        ln_block(f"enc{i}.ln2")
    for i in range(config.dec_layers):
        attn_block(f"dec{i}.self")
        ln_block(f"dec{i}.ln1")
        attn_block(f"dec{i}.cross")
        ln_block(f"dec{i}.ln2")
        ffn_block(f"dec{i}.ffn")
        ln_block(f"dec{i}.ln3")

    t["queries"] = Tensor(rng.normal(0.0, 0.02, size=(config.pred_horizon, d)), requires_grad=True)
    weight("head", d, config.joint_dim)

    weight("cvae.l1", config.pred_horizon * config.joint_dim, config.cvae_hidden)
    weight("cvae.l2", config.cvae_hidden, 2 * config.d_z)
    # start near-deterministic: small initial posterior variance keeps early
    # training from being swamped by style noise
    t["cvae.l2_b"].data[config.d_z :] = -4.0

    norm = {
        "feat_mean": np.zeros(config.feature_dim),
        "feat_std": np.ones(config.feature_dim),
        "joint_mean": np.zeros(config.joint_dim),
        "joint_std": np.ones(config.joint_dim),
        "label_mean": np.zeros(config.joint_dim),
        "label_std": np.ones(config.joint_dim),
        "posenc": _sinusoidal(config.obs_horizon + 2, d),
    }
    return PolicyParams(config=config, tensors=t, norm=norm)


def set_normalization(params: PolicyParams, feats: np.ndarray, joints: np.ndarray,
                      labels: np.ndarray) -> None:
    """Fit input/label standardization from training data (persisted with the
    checkpoint, applied inside the forward pass)."""
    def stats(x):
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std[std < 1e-6] = 1.0
        return mean, std

    params.norm["feat_mean"], params.norm["feat_std"] = stats(feats.reshape(-1, feats.shape[-1]))
    params.norm["joint_mean"], params.norm["joint_std"] = stats(joints.reshape(-1, joints.shape[-1]))
    params.norm["label_mean"], params.norm["label_std"] = stats(labels.reshape(-1, labels.shape[-1]))


def _mlp2(x: Tensor, t: dict, prefix: str) -> Tensor:
    h = ad.relu(ad.linear(x, t[prefix + ".l1"], t[prefix + ".l1_b"]))
    return ad.linear(h, t[prefix + ".l2"], t[prefix + ".l2_b"])


def _attention(t: dict, prefix: str, q_in: Tensor, kv_in: Tensor, n_heads: int) -> Tensor:
    B, Tq, d = q_in.shape
    Tk = kv_in.shape[1]
    hd = d // n_heads
    scale = 1.0 / math.sqrt(hd)

    def split_heads(x, T):
        return x.reshape((B, T, n_heads, hd)).transpose((0, 2, 1, 3))

    q = split_heads(ad.linear(q_in, t[prefix + ".wq"], t[prefix + ".wq_b"]), Tq)
    k = split_heads(ad.linear(kv_in, t[prefix + ".wk"], t[prefix + ".wk_b"]), Tk)
    v = split_heads(ad.linear(kv_in, t[prefix + ".wv"], t[prefix + ".wv_b"]), Tk)
    scores = ad.mul(ad.matmul(q, k.transpose((0, 1, 3, 2))), scale)
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(attn, v).transpose((0, 2, 1, 3)).reshape((B, Tq, d))
    return ad.linear(ctx, t[prefix + ".wo"], t[prefix + ".wo_b"])


def _encoder(t: dict, x: Tensor, layers: int, n_heads: int) -> Tensor:
    for i in range(layers):
        a = _attention(t, f"enc{i}.attn", x, x, n_heads)
        x = ad.layer_norm(ad.add(x, a), t[f"enc{i}.ln1.g"], t[f"enc{i}.ln1.b"])
        f = ad.linear(ad.relu(ad.linear(x, t[f"enc{i}.ffn.l1"], t[f"enc{i}.ffn.l1_b"])),
                      t[f"enc{i}.ffn.l2"], t[f"enc{i}.ffn.l2_b"])
        x = ad.layer_norm(ad.add(x, f), t[f"enc{i}.ln2.g"], t[f"enc{i}.ln2.b"])
    return x


def _decoder(t: dict, queries: Tensor, memory: Tensor, layers: int, n_heads: int) -> Tensor:
    x = queries
    for i in range(layers):
        a = _attention(t, f"dec{i}.self", x, x, n_heads)
        x = ad.layer_norm(ad.add(x, a), t[f"dec{i}.ln1.g"], t[f"dec{i}.ln1.b"])
        c = _attention(t, f"dec{i}.cross", x, memory, n_heads)
        x = ad.layer_norm(ad.add(x, c), t[f"dec{i}.ln2.g"], t[f"dec{i}.ln2.b"])
        f = ad.linear(ad.relu(ad.linear(x, t[f"dec{i}.ffn.l1"], t[f"dec{i}.ffn.l1_b"])),
                      t[f"dec{i}.ffn.l2"], t[f"dec{i}.ffn.l2_b"])
        x = ad.layer_norm(ad.add(x, f), t[f"dec{i}.ln3.g"], t[f"dec{i}.ln3.b"])
    return x


def policy_forward(
    params: PolicyParams,
    obs_features: np.ndarray,   # (B, S, 16)
    obs_joints: np.ndarray,     # (B, S, 6)
    goal: np.ndarray,           # (B, 16)
    z: Tensor | np.ndarray,     # (B, d_z)
) -> Tensor:
    """Predict the future joint chunk, shape (B, H, 6).

    Deterministic given inputs. Absolute joint radians by default; per-step
    deltas when the config is incremental.
    """
    cfg = params.config
    t = params.tensors
    obs_features = np.asarray(obs_features, dtype=float)
    obs_joints = np.asarray(obs_joints, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if obs_features.ndim != 3 or obs_features.shape[1] != cfg.obs_horizon:
        raise ValueError(f"obs_features must be (B, {cfg.obs_horizon}, {cfg.feature_dim})")
    if obs_joints.shape != (*obs_features.shape[:2], cfg.joint_dim):
        raise ValueError("obs_joints misshaped")
    B, S = obs_features.shape[:2]
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=float))
    if z.shape != (B, cfg.d_z):
        raise ValueError(f"z must be (B, {cfg.d_z})")

    norm = params.norm
    fs = Tensor((obs_features - norm["feat_mean"]) / norm["feat_std"])
    tok = _mlp2(fs, t, "embed.feat")
    if cfg.use_proprio:
        js = Tensor((obs_joints - norm["joint_mean"]) / norm["joint_std"])
        tok = ad.add(tok, _mlp2(js, t, "embed.joint"))
    tok = ad.add(tok, Tensor(norm["posenc"][1 : S + 1]))

    style = ad.add(ad.linear(z, t["style.proj"], t["style.proj_b"]),
                   Tensor(norm["posenc"][0]))
    parts = [style.reshape((B, 1, cfg.d_model)), tok]
    if cfg.use_goal:
        gs = Tensor((goal - norm["feat_mean"]) / norm["feat_std"])
        gtok = ad.add(_mlp2(gs, t, "embed.goal"), Tensor(norm["posenc"][S + 1]))
        parts.append(gtok.reshape((B, 1, cfg.d_model)))
    x = ad.concat(parts, axis=1)

    memory = _encoder(t, x, cfg.enc_layers, cfg.n_heads)
    queries = ad.add(t["queries"].reshape((1, cfg.pred_horizon, cfg.d_model)),
                     Tensor(np.zeros((B, 1, 1))))
    dec = _decoder(t, queries, memory, cfg.dec_layers, cfg.n_heads)
    out = ad.linear(dec, t["head"], t["head_b"])
    out = ad.add(ad.mul(out, Tensor(norm["label_std"])), Tensor(norm["label_mean"]))
    if cfg.incremental:
        return out  # per-step deltas; deployment integrates from the current state
    if cfg.use_proprio:
        # the head predicts chunk offsets; anchoring at the last observed state
        # keeps the output absolute and re-anchors every control tick
        return ad.add(out, Tensor(obs_joints[:, -1:, :]))
    return out  # proprio-free variants predict raw absolute joints


def encode_style(params: PolicyParams, future: np.ndarray) -> tuple[Tensor, Tensor]:
    """CVAE encoder: ground-truth future chunk -> (mu, logvar), each (B, d_z)."""
    cfg = params.config
    t = params.tensors
    future = np.asarray(future, dtype=float)
    if future.ndim == 2:
        future = future[None]
    if future.shape[1:] != (cfg.pred_horizon, cfg.joint_dim):
        raise ValueError(f"future must be (B, {cfg.pred_horizon}, {cfg.joint_dim})")
    B = future.shape[0]
    fs = Tensor((future - params.norm["label_mean"]) / params.norm["label_std"])
    flat = fs.reshape((B, cfg.pred_horizon * cfg.joint_dim))
    h = ad.relu(ad.linear(flat, t["cvae.l1"], t["cvae.l1_b"]))
    both = ad.linear(h, t["cvae.l2"], t["cvae.l2_b"])
    mu = both[:, : cfg.d_z]
    logvar = ad.clip(both[:, cfg.d_z :], LOGVAR_MIN, LOGVAR_MAX)
    return mu, logvar


def sample_z(mu: Tensor, logvar: Tensor, rng: np.random.Generator) -> Tensor:
    """Reparameterized draw: z = mu + exp(logvar / 2) * eps."""
    eps = Tensor(rng.standard_normal(mu.shape))
    return ad.add(mu, ad.mul(ad.exp(ad.mul(logvar, 0.5)), eps))


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean over the batch of KL(N(mu, sigma^2) || N(0, I))."""
    term = ad.add(ad.add(Tensor(np.ones(1)), logvar),
                  ad.mul(ad.add(ad.mul(mu, mu), ad.exp(logvar)), -1.0))
    return ad.mul(ad.mean_(ad.sum_(term, axis=1)), -0.5)


def total_loss(
    params: PolicyParams,
    batch: dict,
    z: Tensor,
    beta: float,
    lambda_smooth: float,
    mu: Tensor | None = None,
    logvar: Tensor | None = None,
) -> tuple[Tensor, dict]:
    """Composite objective: reconstruction + weighted KL + weighted smoothness.

    batch carries arrays obs_features (B,S,16), obs_joints (B,S,6),
    goal (B,16), labels (B,H,6). Components already include their weights,
    so the total equals their exact sum.
    """
    if mu is None or logvar is None:
        mu, logvar = encode_style(params, batch["labels"])
    pred = policy_forward(params, batch["obs_features"], batch["obs_joints"], batch["goal"], z)
    targets = np.asarray(batch["labels"], dtype=float)
    if not params.config.incremental and params.config.use_proprio:
        # labels are stored as offsets from the last observed state; the
        # prediction is absolute, so compare in absolute coordinates
        targets = targets + np.asarray(batch["obs_joints"], dtype=float)[:, -1:, :]
    labels = Tensor(targets)
    err = ad.add(pred, ad.mul(labels, -1.0))
    H = params.config.pred_horizon
    mse = ad.mean_(ad.mul(ad.sum_(ad.sum_(ad.mul(err, err), axis=2), axis=1), 1.0 / H))
    kl = ad.mul(kl_divergence(mu, logvar), beta)
    diffs = ad.add(pred[:, 1:, :], ad.mul(pred[:, :-1, :], -1.0))
    smooth = ad.mul(ad.mean_(ad.sum_(ad.sum_(ad.abs_(diffs), axis=2), axis=1)), lambda_smooth)
    total = ad.add(ad.add(mse, kl), smooth)
    components = {
        "mse": float(mse.data),
        "kl": float(kl.data),
        "smooth": float(smooth.data),
    }
    return total, components


def backward(
    params: PolicyParams,
    batch: dict,
    z: Tensor,
    beta: float,
    lambda_smooth: float,
    mu: Tensor | None = None,
    logvar: Tensor | None = None,
) -> tuple[dict[str, np.ndarray], float, dict]:
    """Gradients of total_loss for every learnable tensor.

    Raises TrainingError naming the offending tensor on non-finite gradients.
    """
    params.zero_grads()
    loss, components = total_loss(params, batch, z, beta, lambda_smooth, mu=mu, logvar=logvar)
    if not np.isfinite(loss.data):
        raise TrainingError("loss is non-finite")
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, tensor in params.tensors.items():
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        grads[name] = g
    return grads, float(loss.data), components
