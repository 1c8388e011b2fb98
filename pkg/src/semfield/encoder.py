"""Hierarchical point-set encoder.

Maps a short history of point observations (positions + per-point semantic
channels + proprioception) to a fixed-width embedding through two set
abstraction levels: farthest-point centroids, radius grouping with a
neighbor cap, a shared per-group MLP, and max-pooling, followed by a
global max-pool, a per-frame dense, and a final dense that folds the
proprioceptive history in.

Order canonicalization happens up front: each frame's rows are sorted
lexicographically and exact duplicates dropped, and the centroid FPS seed
is a CRC of the canonical coordinate bytes. Every later stage is then a
function of the point set rather than the array order, which makes
permutation invariance exact rather than approximate.

The parameter-independent part of the computation (sorting, FPS, radius
groups, coordinate features, gathered channels) is captured in FramePlan
objects so training loops can pay for it once per frame.

Coordinate features are scaled by the grouping radius so they enter the
MLPs at the same order of magnitude as the semantic channels. Level 1
uses centroid-relative offsets; level 2 keeps workspace-frame positions,
because an embedding built from relative offsets alone is translation
invariant and the policy could no longer tell where the scene content
actually is.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import fps_downsample
from .netcore import (
    ParameterStore,
    dense_backward,
    dense_forward,
    mish_backward,
    mish_forward,
)
from .semantics import PolicyObservation

__all__ = [
    "EncoderConfig",
    "ObservationEmbedding",
    "FramePlan",
    "init_encoder_params",
    "plan_frame",
    "plan_history",
    "encode",
    "encode_batch",
    "encode_backward",
    "embedding_width",
]


@dataclass(frozen=True)
class EncoderConfig:
    """Set-abstraction sizes; all defaults are deliberate design choices."""

    centroids: tuple[int, int] = (64, 16)
    radii: tuple[float, float] = (0.04, 0.12)
    neighbor_cap: int = 16
    mlp1: tuple[int, int] = (64, 64)
    mlp2: tuple[int, int] = (128, 128)
    global_width: int = 256
    t_o: int = 2

    def __post_init__(self) -> None:
        if len(self.centroids) != 2 or min(self.centroids) < 1:
            raise ValueError("need two positive centroid counts")
        if len(self.radii) != 2 or not 0.0 < self.radii[0] < self.radii[1]:
            raise ValueError("grouping radii must be positive and increasing")
        if self.neighbor_cap < 1:
            raise ValueError("neighbor cap must be >= 1")
        for widths in (self.mlp1, self.mlp2):
            if len(widths) != 2 or min(widths) < 1:
                raise ValueError("per-level MLPs need two positive widths")
        if self.global_width < 1 or self.t_o < 1:
            raise ValueError("global width and horizon must be >= 1")


@dataclass(frozen=True)
class ObservationEmbedding:
    """Fixed-width conditioning vector for the action policy."""

    vector: np.ndarray  # (t_o * global_width,)

    def __post_init__(self) -> None:
        v = np.asarray(self.vector)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("embedding must be a finite vector")
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class FramePlan:
    """Parameter-independent grouping geometry for one observation frame."""

    x1: np.ndarray  # (C1, cap, 3 + M) level-1 group inputs
    g2_idx: np.ndarray  # (C2, cap) level-2 neighbor indices into level-1
    g2_pos: np.ndarray  # (C2, cap, 3) workspace-frame, radius-scaled


def embedding_width(config: EncoderConfig) -> int:
    return config.t_o * config.global_width


def _param_shapes(config: EncoderConfig, m_channels: int, proprio_dim: int):
    d = config.global_width * config.t_o
    return {
        "enc.sa1.d0.w": (3 + m_channels, config.mlp1[0]),
        "enc.sa1.d0.b": (config.mlp1[0],),
        "enc.sa1.d1.w": (config.mlp1[0], config.mlp1[1]),
        "enc.sa1.d1.b": (config.mlp1[1],),
        "enc.sa2.d0.w": (3 + config.mlp1[1], config.mlp2[0]),
        "enc.sa2.d0.b": (config.mlp2[0],),
        "enc.sa2.d1.w": (config.mlp2[0], config.mlp2[1]),
        "enc.sa2.d1.b": (config.mlp2[1],),
        "enc.glob.w": (config.mlp2[1], config.global_width),
        "enc.glob.b": (config.global_width,),
        "enc.out.w": (d + config.t_o * proprio_dim, d),
        "enc.out.b": (d,),
    }


def init_encoder_params(
    store: ParameterStore,
    rng: np.random.Generator,
    config: EncoderConfig,
    m_channels: int,
    proprio_dim: int,
) -> None:
    """He-style initialization of every encoder parameter."""
    for name, shape in _param_shapes(config, m_channels, proprio_dim).items():
        if name.endswith(".b"):
            store.add(name, np.zeros(shape))
        else:
            store.add(name, rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape))


def _canonical_rows(points: np.ndarray, channels: np.ndarray) -> np.ndarray:
    rows = np.concatenate(
        [
            np.asarray(points, dtype=np.float64),
            np.asarray(channels, dtype=np.float64),
        ],
        axis=1,
    )
    # Lexicographic sort + exact-duplicate removal: the rest of the
    # pipeline then sees a canonical set regardless of input order or
    # repeated rows.
    return np.unique(rows, axis=0)


def _fps_canonical(pts: np.ndarray, k: int):
    seed = zlib.crc32(np.ascontiguousarray(pts).tobytes())
    return fps_downsample(pts, k, seed=seed)


def _radius_groups(
    pts: np.ndarray, centroids: np.ndarray, radius: float, cap: int
) -> np.ndarray:
    """Indices of up to ``cap`` nearest points within ``radius``.

    Nearest-first with stable index tie-breaking; slots past the neighbor
    count repeat the nearest point (the centroid itself, distance zero),
    so groups are never empty and pooling is unaffected.
    """
    d2 = ((centroids[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    take = order[:, :cap]
    sorted_d2 = np.take_along_axis(d2, take, axis=1)
    counts = (np.sort(d2, axis=1) <= radius * radius).sum(axis=1)
    pos = np.arange(cap)[None, :]
    fill = np.repeat(order[:, :1], cap, axis=1)
    return np.where(pos < np.minimum(counts, cap)[:, None], take, fill)


def plan_frame(
    points: np.ndarray, channels: np.ndarray, config: EncoderConfig
) -> FramePlan:
    """Precompute grouping geometry for one frame."""
    rows = _canonical_rows(points, channels)
    pts, ch = rows[:, :3], rows[:, 3:]
    c1 = _fps_canonical(pts, config.centroids[0])
    g1 = _radius_groups(pts, c1.points, config.radii[0], config.neighbor_cap)
    rel1 = (pts[g1] - c1.points[:, None, :]) / config.radii[0]
    x1 = np.concatenate([rel1, ch[g1]], axis=2)
    c2 = _fps_canonical(c1.points, config.centroids[1])
    g2 = _radius_groups(c1.points, c2.points, config.radii[1], config.neighbor_cap)
    pos2 = c1.points[g2] / config.radii[1]
    return FramePlan(x1=x1, g2_idx=g2, g2_pos=pos2)


def plan_history(
    obs_history: Sequence[PolicyObservation], config: EncoderConfig
) -> list[FramePlan]:
    if len(obs_history) != config.t_o:
        raise ValueError(
            f"expected {config.t_o} observations, got {len(obs_history)}"
        )
    return [plan_frame(o.points, o.channels, config) for o in obs_history]


def _mlp2_forward(x, params, prefix):
    """dense -> mish -> dense -> mish on flattened rows; returns cache."""
    w0, b0 = params.values[f"{prefix}.d0.w"], params.values[f"{prefix}.d0.b"]
    w1, b1 = params.values[f"{prefix}.d1.w"], params.values[f"{prefix}.d1.b"]
    z0 = dense_forward(x, w0, b0)
    a0, c0 = mish_forward(z0)
    z1 = dense_forward(a0, w1, b1)
    a1, c1 = mish_forward(z1)
    return a1, (x, c0, a0, c1)


def _mlp2_backward(cache, da1, params, prefix):
    x, c0, a0, c1 = cache
    dz1 = mish_backward(c1, da1)
    da0, dw1, db1 = dense_backward(a0, params.values[f"{prefix}.d1.w"], dz1)
    params.accumulate(f"{prefix}.d1.w", dw1)
    params.accumulate(f"{prefix}.d1.b", db1)
    dz0 = mish_backward(c0, da0)
    dx, dw0, db0 = dense_backward(x, params.values[f"{prefix}.d0.w"], dz0)
    params.accumulate(f"{prefix}.d0.w", dw0)
    params.accumulate(f"{prefix}.d0.b", db0)
    return dx


def encode_batch(
    plans: Sequence[Sequence[FramePlan]],
    proprios: np.ndarray,
    params: ParameterStore,
    config: EncoderConfig,
):
    """Encode a batch of observation histories.

    ``plans`` is (B, t_o) FramePlans; ``proprios`` is (B, t_o * P) with the
    per-frame states concatenated in time order. Returns the (B, t_o *
    global_width) embeddings and a cache for encode_backward.
    """
    b = len(plans)
    if b == 0:
        raise ValueError("empty batch")
    if any(len(h) != config.t_o for h in plans):
        raise ValueError(f"each history needs {config.t_o} frames")
    dt = params.dtype
    c1, c2 = config.centroids
    cap = config.neighbor_cap
    din = params.values["enc.sa1.d0.w"].shape[0]
    x1 = np.stack([p.x1 for h in plans for p in h]).astype(dt)
    bt = b * config.t_o
    if x1.shape[1:] != (c1, cap, din):
        raise ValueError(
            f"frame groups {x1.shape[1:]} do not match parameters ({c1}, {cap}, {din})"
        )
    g2i = np.stack([p.g2_idx for h in plans for p in h])
    g2p = np.stack([p.g2_pos for h in plans for p in h]).astype(dt)

    a1, mlp1_cache = _mlp2_forward(x1.reshape(bt * c1 * cap, -1), params, "enc.sa1")
    w1 = a1.shape[-1]
    g1_out = a1.reshape(bt, c1, cap, w1)
    p1 = g1_out.max(axis=2)
    am1 = g1_out.argmax(axis=2)

    frame_ix = np.arange(bt)[:, None, None]
    x2 = np.concatenate([g2p, p1[frame_ix, g2i]], axis=3)
    a2, mlp2_cache = _mlp2_forward(x2.reshape(bt * c2 * cap, -1), params, "enc.sa2")
    w2 = a2.shape[-1]
    g2_out = a2.reshape(bt, c2, cap, w2)
    p2 = g2_out.max(axis=2)
    am2 = g2_out.argmax(axis=2)

    pg = p2.max(axis=1)
    amg = p2.argmax(axis=1)
    zg = dense_forward(pg, params.values["enc.glob.w"], params.values["enc.glob.b"])
    ag, cg = mish_forward(zg)

    frames = ag.reshape(b, config.t_o * config.global_width)
    pro = np.asarray(proprios, dtype=dt)
    if pro.shape[0] != b:
        raise ValueError("proprios do not match the batch")
    u = np.concatenate([frames, pro], axis=1)
    w_out = params.values["enc.out.w"]
    if u.shape[1] != w_out.shape[0]:
        raise ValueError(
            f"proprio width {pro.shape[1]} does not match parameters"
        )
    out = dense_forward(u, w_out, params.values["enc.out.b"])
    cache = {
        "mlp1": mlp1_cache,
        "am1": am1,
        "g2i": g2i,
        "mlp2": mlp2_cache,
        "am2": am2,
        "amg": amg,
        "pg": pg,
        "cg": cg,
        "u": u,
        "shapes": (b, bt, c1, c2, cap, w1, w2, config.global_width, config.t_o),
        "step": params.step,
    }
    return out, cache


def encode_backward(cache, dout: np.ndarray, params: ParameterStore) -> None:
    """Accumulate parameter gradients for one encode_batch call.

    Inputs (plans, proprios) are data, so their gradients are discarded.
    """
    if cache["step"] != params.step:
        raise ValueError("stale cache: parameters changed since forward")
    b, bt, c1, c2, cap, w1, w2, gw, t_o = cache["shapes"]
    dt = params.dtype
    dout = np.asarray(dout, dtype=dt)

    du, dwo, dbo = dense_backward(cache["u"], params.values["enc.out.w"], dout)
    params.accumulate("enc.out.w", dwo)
    params.accumulate("enc.out.b", dbo)
    dag = du[:, : t_o * gw].reshape(bt, gw)

    dzg = mish_backward(cache["cg"], dag)
    dpg, dwg, dbg = dense_backward(cache["pg"], params.values["enc.glob.w"], dzg)
    params.accumulate("enc.glob.w", dwg)
    params.accumulate("enc.glob.b", dbg)

    dp2 = np.zeros((bt, c2, w2), dtype=dt)
    np.put_along_axis(dp2, cache["amg"][:, None, :], dpg[:, None, :], axis=1)
    dg2 = np.zeros((bt, c2, cap, w2), dtype=dt)
    np.put_along_axis(dg2, cache["am2"][:, :, None, :], dp2[:, :, None, :], axis=2)
    dx2 = _mlp2_backward(cache["mlp2"], dg2.reshape(bt * c2 * cap, w2), params, "enc.sa2")
    dx2 = dx2.reshape(bt, c2, cap, -1)

    dp1 = np.zeros((bt, c1, w1), dtype=dt)
    frame_ix = np.broadcast_to(np.arange(bt)[:, None, None], cache["g2i"].shape)
    np.add.at(dp1, (frame_ix, cache["g2i"]), dx2[..., 3:])
    dg1 = np.zeros((bt, c1, cap, w1), dtype=dt)
    np.put_along_axis(dg1, cache["am1"][:, :, None, :], dp1[:, :, None, :], axis=2)
    _mlp2_backward(cache["mlp1"], dg1.reshape(bt * c1 * cap, w1), params, "enc.sa1")


def encode(
    obs_history: Sequence[PolicyObservation],
    params: ParameterStore,
    config: EncoderConfig,
) -> ObservationEmbedding:
    """Single-item convenience wrapper around encode_batch."""
    plans = plan_history(obs_history, config)
    pro = np.concatenate([np.asarray(o.proprio, dtype=np.float64) for o in obs_history])
    out, _ = encode_batch([plans], pro[None, :], params, config)
    return ObservationEmbedding(vector=out[0])
