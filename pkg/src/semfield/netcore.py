"""Minimal differentiable computation substrate.

A closed layer vocabulary (dense, Mish activation, layer-norm, concat of a
named side input, sinusoidal time embedding) with hand-written reverse-mode
gradients, a bias-corrected Adam update, central-finite-difference gradient
verification, and a checksummed binary checkpoint format.

The vocabulary is deliberately small: the denoiser and the point-set
encoder need nothing else, and every backward rule stays hand-verifiable.
Low-level primitives (``dense_forward`` etc.) are exported for callers,
such as the encoder, whose data flow is not a flat layer chain.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

__all__ = [
    "ParameterStore",
    "LayerSpec",
    "Network",
    "Tape",
    "forward",
    "backward",
    "adam_step",
    "grad_check",
    "finite_difference_check",
    "dense_forward",
    "dense_backward",
    "mish_forward",
    "mish_backward",
    "layer_norm_forward",
    "layer_norm_backward",
    "sinusoidal_time_embed",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_MAGIC = b"GDPC"
CHECKPOINT_VERSION = 1

_LN_EPS = 1e-5


class ParameterStore:
    """Named parameter arrays with matching gradient and Adam moment buffers."""

    def __init__(self, dtype=np.float32) -> None:
        self.dtype = np.dtype(dtype)
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.values:
            raise ValueError(f"parameter {name!r} already exists")
        arr = np.asarray(value, dtype=self.dtype).copy()
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad.astype(self.dtype, copy=False)

    def names(self) -> list[str]:
        return list(self.values.keys())

    def astype(self, dtype) -> "ParameterStore":
        """Copy with a different float width; moments reset, step kept."""
        out = ParameterStore(dtype=dtype)
        for name, val in self.values.items():
            out.add(name, val)
        out.step = self.step
        return out


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the closed vocabulary.

    kind: "dense" | "activation" | "layer-norm" | "concat" |
    "sinusoidal-time-embed". ``name`` prefixes parameter names for kinds
    that own parameters; ``extra`` names the side input consumed by concat
    and the time embedding; ``dims`` carries (in, out) for dense, (dim,)
    for layer-norm, and the appended width for concat / time embedding.
    """

    kind: str
    name: str = ""
    dims: tuple[int, ...] = ()
    extra: str = ""


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def dense_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dx = dy @ w.T
    if x.ndim == 1:
        dw = np.outer(x, dy)
        db = dy.copy()
    else:
        dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
        db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


def mish_forward(x: np.ndarray) -> tuple[np.ndarray, tuple]:
    sp = np.logaddexp(0.0, x)  # stable softplus
    t = np.tanh(sp)
    sig = 1.0 / (1.0 + np.exp(-x))
    return x * t, (x, t, sig)


def mish_backward(cache: tuple, dy: np.ndarray) -> np.ndarray:
    x, t, sig = cache
    return dy * (t + x * (1.0 - t * t) * sig)


def layer_norm_forward(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray
) -> tuple[np.ndarray, tuple]:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return gain * xhat + bias, (xhat, inv)


def layer_norm_backward(
    cache: tuple, gain: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv = cache
    d = xhat.shape[-1]
    dxhat = dy * gain
    dx = (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    ) * inv
    if dy.ndim == 1:
        dg = dy * xhat
        db = dy.copy()
    else:
        dg = (dy * xhat).reshape(-1, d).sum(axis=0)
        db = dy.reshape(-1, d).sum(axis=0)
    return dx, dg, db


def sinusoidal_time_embed(k, dim: int) -> np.ndarray:
    """Sin/cos positional embedding of a (batch of) step index k."""
    if dim < 2 or dim % 2 != 0:
        raise ValueError("embedding dimension must be even and >= 2")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
    k = np.asarray(k, dtype=np.float64)
    ang = k[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


class Network:
    """A flat chain of LayerSpecs with named parameters in a ParameterStore."""

    def __init__(self, name: str, in_dim: int, layers: Iterable[LayerSpec]):
        self.name = name
        self.in_dim = in_dim
        self.layers = list(layers)
        self.out_dim = self._check_dims()

    def _check_dims(self) -> int:
        d = self.in_dim
        for i, spec in enumerate(self.layers):
            if spec.kind == "dense":
                if len(spec.dims) != 2:
                    raise ValueError("dense needs (in, out) dims")
                if spec.dims[0] != d:
                    raise ValueError(
                        f"layer {i}: dense expects {spec.dims[0]} inputs, chain has {d}"
                    )
                d = spec.dims[1]
            elif spec.kind == "activation":
                pass
            elif spec.kind == "layer-norm":
                if spec.dims != (d,):
                    raise ValueError(f"layer {i}: layer-norm dims must be ({d},)")
            elif spec.kind == "concat":
                if len(spec.dims) != 1 or not spec.extra:
                    raise ValueError("concat needs (width,) dims and an extra name")
                d += spec.dims[0]
            elif spec.kind == "sinusoidal-time-embed":
                if len(spec.dims) != 1 or not spec.extra:
                    raise ValueError("time embed needs (width,) dims and an extra name")
                d += spec.dims[0]
            else:
                raise ValueError(f"unknown layer kind {spec.kind!r}")
        return d

    def param_name(self, i: int, which: str) -> str:
        return f"{self.name}.l{i}.{which}"

    def init_params(
        self,
        store: ParameterStore,
        rng: np.random.Generator,
        zero_final_dense: bool = False,
    ) -> None:
        """He-style initialization; optional zero init of the last dense
        layer (useful so an untrained noise predictor outputs zero)."""
        last_dense = max(
            (i for i, s in enumerate(self.layers) if s.kind == "dense"), default=-1
        )
        for i, spec in enumerate(self.layers):
            if spec.kind == "dense":
                fan_in, fan_out = spec.dims
                if zero_final_dense and i == last_dense:
                    w = np.zeros((fan_in, fan_out))
                else:
                    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
                store.add(self.param_name(i, "w"), w)
                store.add(self.param_name(i, "b"), np.zeros(fan_out))
            elif spec.kind == "layer-norm":
                store.add(self.param_name(i, "g"), np.ones(spec.dims[0]))
                store.add(self.param_name(i, "b"), np.zeros(spec.dims[0]))


@dataclass
class Tape:
    """Cached activations from one forward pass."""

    net: Network
    records: list = field(default_factory=list)
    params_step: int = 0
    single: bool = False


def forward(
    net: Network,
    params: ParameterStore,
    x: np.ndarray,
    extras: Mapping[str, np.ndarray] | None = None,
) -> tuple[np.ndarray, Tape]:
    """Run the chain; the returned tape suffices for exact reverse mode.

    ``x`` may be a single vector (in_dim,) or a batch (B, in_dim); extras
    follow the same convention, and the time embedding consumes a scalar
    (or (B,)) step index.
    """
    x = np.asarray(x, dtype=params.dtype)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[-1] != net.in_dim:
        raise ValueError(f"input width {h.shape[-1]} != network input {net.in_dim}")
    extras = extras or {}
    tape = Tape(net=net, params_step=params.step, single=single)
    for i, spec in enumerate(net.layers):
        if spec.kind == "dense":
            w = params.values[net.param_name(i, "w")]
            b = params.values[net.param_name(i, "b")]
            tape.records.append(("dense", h))
            h = dense_forward(h, w, b)
        elif spec.kind == "activation":
            h, cache = mish_forward(h)
            tape.records.append(("activation", cache))
        elif spec.kind == "layer-norm":
            g = params.values[net.param_name(i, "g")]
            b = params.values[net.param_name(i, "b")]
            h, cache = layer_norm_forward(h, g, b)
            tape.records.append(("layer-norm", cache))
        elif spec.kind == "concat":
            if spec.extra not in extras:
                raise ValueError(f"missing extra input {spec.extra!r}")
            e = np.asarray(extras[spec.extra], dtype=params.dtype)
            if e.ndim == 1:
                e = np.broadcast_to(e, (h.shape[0], e.shape[0]))
            if e.shape != (h.shape[0], spec.dims[0]):
                raise ValueError(f"extra {spec.extra!r} has width {e.shape[-1]}, expected {spec.dims[0]}")
            tape.records.append(("concat", h.shape[-1]))
            h = np.concatenate([h, e], axis=-1)
        elif spec.kind == "sinusoidal-time-embed":
            if spec.extra not in extras:
                raise ValueError(f"missing step index {spec.extra!r}")
            kk = np.asarray(extras[spec.extra], dtype=np.float64)
            emb = sinusoidal_time_embed(kk, spec.dims[0]).astype(params.dtype)
            if emb.ndim == 1:
                emb = np.broadcast_to(emb, (h.shape[0], emb.shape[0]))
            tape.records.append(("sinusoidal-time-embed", h.shape[-1]))
            h = np.concatenate([h, emb], axis=-1)
    out = h[0] if single else h
    return out, tape


def backward(
    net: Network,
    params: ParameterStore,
    tape: Tape,
    upstream: np.ndarray,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Reverse-mode pass; accumulates into ``params.grads``.

    Returns (gradient w.r.t. the chain input, gradients w.r.t. concat
    extras keyed by extra name). Raises on a tape taken before the last
    parameter update (stale activations would yield wrong gradients).
    """
    if tape.net is not net:
        raise ValueError("tape does not belong to this network")
    if tape.params_step != params.step:
        raise ValueError("stale tape: parameters changed since forward")
    if len(tape.records) != len(net.layers):
        raise ValueError("stale tape: record count mismatch")
    d = np.asarray(upstream, dtype=params.dtype)
    if tape.single:
        d = d[None, :]
    dextras: dict[str, np.ndarray] = {}
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        kind, cache = tape.records[i]
        if kind != spec.kind:
            raise ValueError("stale tape: layer kinds diverged")
        if spec.kind == "dense":
            x = cache
            w = params.values[net.param_name(i, "w")]
            d, dw, db = dense_backward(x, w, d)
            params.accumulate(net.param_name(i, "w"), dw)
            params.accumulate(net.param_name(i, "b"), db)
        elif spec.kind == "activation":
            d = mish_backward(cache, d)
        elif spec.kind == "layer-norm":
            g = params.values[net.param_name(i, "g")]
            d, dg, db = layer_norm_backward(cache, g, d)
            params.accumulate(net.param_name(i, "g"), dg)
            params.accumulate(net.param_name(i, "b"), db)
        elif spec.kind == "concat":
            split = cache
            dextras[spec.extra] = d[:, split:].copy()
            d = d[:, :split]
        elif spec.kind == "sinusoidal-time-embed":
            split = cache
            d = d[:, :split]  # no gradient w.r.t. an integer step index
    dx = d[0] if tape.single else d
    if tape.single:
        dextras = {k: v[0] for k, v in dextras.items()}
    return dx, dextras


def adam_step(
    params: ParameterStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_num: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam over all populated gradients."""
    for g in params.grads.values():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("diverged")
    params.step += 1
    t = params.step
    b1c = 1.0 - beta1**t
    b2c = 1.0 - beta2**t
    for name, val in params.values.items():
        g = params.grads[name]
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        val -= lr * (m / b1c) / (np.sqrt(v / b2c) + eps_num)


def finite_difference_check(
    loss_fn: Callable[[], float],
    analytic: Mapping[str, np.ndarray],
    params: ParameterStore,
    h: float,
    rel_floor: float = 1e-6,
) -> float:
    """Max relative error of analytic gradients vs central differences.

    Perturbs every element of every parameter by +-h. The relative error
    denominator is floored at ``rel_floor`` so round-off noise on
    near-zero gradients does not register as disagreement.
    """
    if params.dtype != np.float64:
        raise ValueError("finite differences require a float64 parameter store")
    worst = 0.0
    for name, val in params.values.items():
        a = analytic[name]
        flat = val.reshape(-1)
        fd = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = loss_fn()
            flat[j] = orig - h
            lm = loss_fn()
            flat[j] = orig
            fd[j] = (lp - lm) / (2.0 * h)
        fd = fd.reshape(val.shape)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), rel_floor)
        worst = max(worst, float(np.max(np.abs(a - fd) / denom)))
    return worst


def grad_check(
    net: Network,
    params: ParameterStore,
    x: np.ndarray,
    h: float = 1e-5,
    extras: Mapping[str, np.ndarray] | None = None,
) -> float:
    """Verify the chain's backward pass against central differences.

    Probes the scalar L = 0.5 * ||forward(x)||^2 and compares dL/dtheta
    for every parameter element. Requires a float64 store.
    """
    if params.dtype != np.float64:
        raise ValueError("grad_check requires a float64 parameter store")

    def loss() -> float:
        y, _ = forward(net, params, x, extras=extras)
        return 0.5 * float(np.sum(np.asarray(y, dtype=np.float64) ** 2))

    y, tape = forward(net, params, x, extras=extras)
    params.zero_grads()
    backward(net, params, tape, y)
    analytic = {name: params.grads[name].copy() for name in params.names()}
    return finite_difference_check(loss, analytic, params, h)


def save_checkpoint(path: str | Path, params: ParameterStore) -> None:
    """Write parameters as GDPC: magic, version u32, then per-parameter
    records (name length u32, name bytes, rank u32, dims u32 each, float32
    row-major data), all little-endian, with a trailing CRC32."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name in sorted(params.values.keys()):
        arr = np.ascontiguousarray(params.values[name], dtype="<f4")
        enc = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(enc)))
        chunks.append(enc)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path: str | Path, dtype=np.float32) -> ParameterStore:
    """Read a GDPC file back into a fresh ParameterStore (moments zeroed)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a GDPC checkpoint")
    body, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) != crc:
        raise ValueError("checkpoint checksum mismatch")
    version = struct.unpack("<I", body[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    store = ParameterStore(dtype=dtype)
    off = 8
    while off < len(body):
        (nlen,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", body, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", body, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=off).reshape(dims)
        off += 4 * count
        store.add(name, arr)
    return store
