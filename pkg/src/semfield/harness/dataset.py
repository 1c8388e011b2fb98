"""GDPE episode files and the dataset manifest.

Binary layout, all little-endian: magic ``GDPE``, version u32, header of
six u32 (n_views, height, width, f_dim, a_dim, steps), then per step and
per view the raw float32 row-major blocks [features, depth, validity
(0/1)], followed by the robot state (3 floats) and the action (a_dim
floats); a CRC32 of everything before it closes the file. Episode
metadata (instance id, split, seed, success) lives in the JSON manifest
next to the episode files, not in the binary.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import RunConfig, collect_hash, config_hash, config_text

__all__ = [
    "Episode",
    "EPISODE_MAGIC",
    "EPISODE_VERSION",
    "ROBOT_DIM",
    "write_episode",
    "read_episode",
    "write_manifest",
    "read_manifest",
    "load_dataset",
    "read_feature_block",
]

EPISODE_MAGIC = b"GDPE"
EPISODE_VERSION = 1
ROBOT_DIM = 3


@dataclass(frozen=True)
class Episode:
    """One recorded trajectory with its per-step multi-view observations."""

    instance_id: str
    split: str
    seed: int
    success: bool
    features: np.ndarray  # (S, V, H, W, F) float32
    depth: np.ndarray  # (S, V, H, W) float32
    validity: np.ndarray  # (S, V, H, W) bool
    robot: np.ndarray  # (S, 3) float32
    actions: np.ndarray  # (S, A) float32

    def __post_init__(self) -> None:
        if self.split not in ("train", "test"):
            raise ValueError("split must be train or test")
        f = np.asarray(self.features, dtype=np.float32)
        if f.ndim != 5:
            raise ValueError("features must be (S, V, H, W, F)")
        s, v, h, w, _ = f.shape
        if s < 1:
            raise ValueError("episodes need at least one step")
        d = np.asarray(self.depth, dtype=np.float32)
        m = np.asarray(self.validity, dtype=bool)
        r = np.asarray(self.robot, dtype=np.float32)
        a = np.asarray(self.actions, dtype=np.float32)
        if d.shape != (s, v, h, w) or m.shape != (s, v, h, w):
            raise ValueError("depth/validity must be (S, V, H, W)")
        if r.shape != (s, ROBOT_DIM) or a.ndim != 2 or a.shape[0] != s:
            raise ValueError("robot must be (S, 3) and actions (S, A)")
        for arr in (f, d, r, a):
            if not np.all(np.isfinite(arr)):
                raise ValueError("episode arrays must be finite")
        for name, arr in (
            ("features", f), ("depth", d), ("validity", m), ("robot", r), ("actions", a)
        ):
            object.__setattr__(self, name, arr)

    @property
    def steps(self) -> int:
        return self.features.shape[0]

    def meta(self, filename: str) -> dict:
        return {
            "file": filename,
            "instance_id": self.instance_id,
            "split": self.split,
            "seed": self.seed,
            "success": self.success,
            "steps": self.steps,
        }


def write_episode(path: str | Path, episode: Episode) -> None:
    s, v, h, w, f = episode.features.shape
    a = episode.actions.shape[1]
    chunks = [
        EPISODE_MAGIC,
        struct.pack("<I", EPISODE_VERSION),
        struct.pack("<6I", v, h, w, f, a, s),
    ]
    for t in range(s):
        for view in range(v):
            chunks.append(np.ascontiguousarray(episode.features[t, view], dtype="<f4").tobytes())
            chunks.append(np.ascontiguousarray(episode.depth[t, view], dtype="<f4").tobytes())
            chunks.append(episode.validity[t, view].astype("<f4").tobytes())
        chunks.append(np.ascontiguousarray(episode.robot[t], dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(episode.actions[t], dtype="<f4").tobytes())
    body = b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_episode(path: str | Path, meta: Mapping) -> Episode:
    """Parse one GDPE file; metadata comes from the manifest entry."""
    raw = Path(path).read_bytes()
    if len(raw) < 36 or raw[:4] != EPISODE_MAGIC:
        raise ValueError("not a GDPE episode")
    body, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) != crc:
        raise ValueError("episode checksum mismatch")
    version = struct.unpack_from("<I", body, 4)[0]
    if version != EPISODE_VERSION:
        raise ValueError(f"unsupported episode version {version}")
    v, h, w, f, a, s = struct.unpack_from("<6I", body, 8)
    per_view = h * w * f + 2 * h * w
    per_step = v * per_view + ROBOT_DIM + a
    expected = 32 + 4 * s * per_step
    if len(body) != expected:
        raise ValueError("episode payload size disagrees with its header")
    flat = np.frombuffer(body, dtype="<f4", offset=32).reshape(s, per_step)
    cursor = 0

    def take(n):
        nonlocal cursor
        block = flat[:, cursor : cursor + n]
        cursor += n
        return block

    features = np.empty((s, v, h, w, f), dtype=np.float32)
    depth = np.empty((s, v, h, w), dtype=np.float32)
    validity = np.empty((s, v, h, w), dtype=bool)
    for view in range(v):
        features[:, view] = take(h * w * f).reshape(s, h, w, f)
        depth[:, view] = take(h * w).reshape(s, h, w)
        validity[:, view] = take(h * w).reshape(s, h, w) != 0.0
    robot = take(ROBOT_DIM).copy()
    actions = take(a).copy()
    return Episode(
        instance_id=str(meta["instance_id"]),
        split=str(meta["split"]),
        seed=int(meta["seed"]),
        success=bool(meta["success"]),
        features=features,
        depth=depth,
        validity=validity,
        robot=robot,
        actions=actions,
    )


def write_manifest(
    dataset_dir: str | Path, config: RunConfig, entries: Sequence[Mapping]
) -> Path:
    payload = {
        "format": "GDPE",
        "version": EPISODE_VERSION,
        "config_hash": config_hash(config),
        "collect_hash": collect_hash(config),
        "config": {
            line.split(" = ")[0]: line.split(" = ", 1)[1]
            for line in config_text(config).strip().splitlines()
        },
        "episodes": list(entries),
    }
    path = Path(dataset_dir) / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(dataset_dir: str | Path) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    payload = json.loads(path.read_text())
    for key in ("format", "config_hash", "episodes"):
        if key not in payload:
            raise ValueError(f"manifest missing {key!r}")
    if payload["format"] != "GDPE":
        raise ValueError("not a GDPE dataset manifest")
    return payload


def load_dataset(dataset_dir: str | Path) -> tuple[dict, list[Episode]]:
    dataset_dir = Path(dataset_dir)
    manifest = read_manifest(dataset_dir)
    episodes = [
        read_episode(dataset_dir / entry["file"], entry)
        for entry in manifest["episodes"]
    ]
    return manifest, episodes


def read_feature_block(path: str | Path, h: int, w: int, f: int) -> np.ndarray:
    """Raw float32 feature image, the same block layout GDPE uses.

    This is the substitution format for externally computed feature maps.
    """
    data = np.fromfile(Path(path), dtype="<f4")
    if data.size != h * w * f:
        raise ValueError(
            f"{path}: expected {h * w * f} float32 values, found {data.size}"
        )
    return data.reshape(h, w, f)
