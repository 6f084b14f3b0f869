"""Episode and clip data model, episode container files, dataset manifests.

Episode files are self-describing single-file containers: a magic line, a
JSON header line (schema version, scene snapshot, rates, provenance, block
shapes), then raw little-endian float64 blocks in fixed order:
joint_times, joints, feature_times, features, goal. The encoding is
byte-stable: identical content serializes to identical bytes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .world import FEATURE_DIM

EPISODE_MAGIC = b"CINEARM-EPISODE v1\n"
SCHEMA_VERSION = 1

JOINT_RATE_HZ = 200.0
FEATURE_RATE_HZ = 30.0
POLICY_RATE_HZ = 10.0


@dataclass
class Episode:
    id: str
    scene: dict                 # scene config snapshot (JSON-compatible)
    joint_times: np.ndarray     # (n,), seconds, 200 Hz
    joints: np.ndarray          # (n, 6)
    feature_times: np.ndarray   # (m,), seconds, 30 Hz
    features: np.ndarray        # (m, 16)
    goal: np.ndarray            # (16,), final rendered feature
    provenance: str = "SCRIPTED"    # TELEOP | SCRIPTED | POLICY
    obstacle: bool = False

    def __post_init__(self):
        self.joint_times = np.asarray(self.joint_times, dtype=np.float64)
        self.joints = np.asarray(self.joints, dtype=np.float64)
        self.feature_times = np.asarray(self.feature_times, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.goal = np.asarray(self.goal, dtype=np.float64)
        if len(self.joint_times) != len(self.joints):
            raise ValueError("joint stream misaligned")
        if len(self.feature_times) != len(self.features):
            raise ValueError("feature stream misaligned")
        for t in (self.joint_times, self.feature_times):
            if len(t) > 1 and not np.all(np.diff(t) > 0):
                raise ValueError("stream times must be strictly increasing")
        if self.goal.shape != (FEATURE_DIM,):
            raise ValueError("goal must be a single feature vector")

    @property
    def duration(self) -> float:
        return float(self.joint_times[-1] - self.joint_times[0])


@dataclass(frozen=True)
class Clip:
    obs_features: np.ndarray    # (S, 16)
    obs_joints: np.ndarray      # (S, 6)
    goal: np.ndarray            # (16,)
    future: np.ndarray          # (H, 6) absolute joint targets
    episode_id: str
    offset: int                 # index of the first observation at the policy rate


def slice_clips(
    episode: Episode,
    S: int = 8,
    H: int = 15,
    stride: int = 1,
    policy_rate_hz: float = POLICY_RATE_HZ,
    phase_s: float = 0.0,
) -> list[Clip]:
    """Sliding-window clips at the policy rate.

    Streams are resampled by nearest-timestamp selection on a tick grid that
    may be phase-shifted by phase_s seconds (the recording rate is far above
    the policy rate, so shifted grids yield genuinely distinct clips from
    the same episode). Returns floor((T - S - H) / stride) + 1 clips for T
    resampled steps, or an empty list when the episode is too short.
    """
    t0 = episode.joint_times[0] + phase_s
    T = int(np.floor((episode.duration - phase_s) * policy_rate_hz)) + 1
    if T < S + H:
        return []
    ticks = t0 + np.arange(T) / policy_rate_hz
    ji = _nearest_indices(episode.joint_times, ticks)
    fi = _nearest_indices(episode.feature_times, ticks)
    joints = episode.joints[ji]
    feats = episode.features[fi]
    clips = []
    for start in range(0, T - S - H + 1, stride):
        clips.append(
            Clip(
                obs_features=feats[start : start + S].copy(),
                obs_joints=joints[start : start + S].copy(),
                goal=episode.goal.copy(),
                future=joints[start + S : start + S + H].copy(),
                episode_id=episode.id,
                offset=start,
            )
        )
    return clips


def _nearest_indices(times: np.ndarray, queries: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(times, queries)
    idx = np.clip(idx, 1, len(times) - 1)
    left = times[idx - 1]
    right = times[idx]
    idx -= (queries - left) < (right - queries)
    return np.clip(idx, 0, len(times) - 1)


def split_episodes(
    episodes: list, ratios: tuple[float, float, float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[list, list, list]:
    """Episode-level train/val/test partition, deterministic under seed."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    n = len(episodes)
    if n < 3:
        raise ValueError("need at least 3 episodes to produce 3 splits")
    order = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(np.floor(ratios[1] * n)))
    n_test = max(1, int(np.floor(ratios[2] * n)))
    n_train = n - n_val - n_test
    train = [episodes[i] for i in order[:n_train]]
    val = [episodes[i] for i in order[n_train : n_train + n_val]]
    test = [episodes[i] for i in order[n_train + n_val :]]
    return train, val, test


# --- container I/O -----------------------------------------------------------

def save_episode(episode: Episode, path: str | Path) -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "id": episode.id,
        "provenance": episode.provenance,
        "obstacle": episode.obstacle,
        "rates": {"joint_hz": JOINT_RATE_HZ, "feature_hz": FEATURE_RATE_HZ},
        "scene": episode.scene,
        "counts": {"joints": len(episode.joints), "features": len(episode.features)},
    }
    with open(path, "wb") as f:
        f.write(EPISODE_MAGIC)
        f.write(_json_line(header))
        for block in (
            episode.joint_times,
            episode.joints,
            episode.feature_times,
            episode.features,
            episode.goal,
        ):
            f.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_episode(path: str | Path) -> Episode:
    with open(path, "rb") as f:
        magic = f.readline()
        if magic != EPISODE_MAGIC:
            raise ValueError(f"not an episode file: {path}")
        header = json.loads(f.readline().decode("utf-8"))
        if header["schema_version"] != SCHEMA_VERSION:
            raise ValueError(f"unsupported episode schema {header['schema_version']}")
        n = header["counts"]["joints"]
        m = header["counts"]["features"]
        joint_times = _read_block(f, (n,))
        joints = _read_block(f, (n, 6))
        feature_times = _read_block(f, (m,))
        features = _read_block(f, (m, FEATURE_DIM))
        goal = _read_block(f, (FEATURE_DIM,))
    return Episode(
        id=header["id"],
        scene=header["scene"],
        joint_times=joint_times,
        joints=joints,
        feature_times=feature_times,
        features=features,
        goal=goal,
        provenance=header["provenance"],
        obstacle=header["obstacle"],
    )


def _json_line(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def _read_block(f, shape) -> np.ndarray:
    count = int(np.prod(shape))
    buf = f.read(count * 8)
    if len(buf) != count * 8:
        raise ValueError("truncated episode file")
    return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()


# --- manifests ---------------------------------------------------------------

@dataclass
class Manifest:
    seed: int
    config_hash: str
    entries: list = field(default_factory=list)  # dicts: file, id, split, obstacle, provenance

    def episodes_for(self, split: str, base: Path) -> list[Episode]:
        return [
            load_episode(base / e["file"]) for e in self.entries if e["split"] == split
        ]


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "seed": manifest.seed,
        "config_hash": manifest.config_hash,
        "episodes": manifest.entries,
    }
    Path(path).write_bytes(_json_line(doc))


def load_manifest(path: str | Path) -> Manifest:
    doc = json.loads(Path(path).read_text())
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ValueError("unsupported manifest schema")
    return Manifest(seed=doc["seed"], config_hash=doc["config_hash"], entries=doc["episodes"])


def config_hash(obj) -> str:
    """Stable short hash of a JSON-compatible config object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
