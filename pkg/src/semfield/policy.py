"""DDPM action head.

Linear-beta noise schedule, forward noising, the noise-prediction training
loss, ancestral reverse sampling, and receding-horizon execution. The
denoiser is a plain MLP over [flattened noisy chunk, observation
embedding, sinusoidal step embedding] with a zero-initialized final layer
so the untrained predictor outputs zero noise.

Reproducibility contract: every training item draws its denoising step and
noise from a dedicated stream seeded by (epoch, item key), and batches are
processed in ascending key order, so the loss is bitwise independent of
batch composition. The per-item draws are, in order: k =
rng.integers(1, K_steps + 1), then eps = rng.standard_normal((T_p, A)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .encoder import (
    EncoderConfig,
    FramePlan,
    encode,
    encode_backward,
    encode_batch,
)
from .netcore import (
    LayerSpec,
    Network,
    ParameterStore,
    backward,
    forward,
)
from .semantics import PolicyObservation

__all__ = [
    "NoiseSchedule",
    "ActionChunk",
    "ActionNormalizer",
    "DenoiserConfig",
    "TrainingItem",
    "Rollout",
    "make_schedule",
    "add_noise",
    "make_denoiser",
    "predict_noise",
    "training_loss",
    "training_step",
    "sample_actions",
    "receding_horizon_execute",
    "fit_action_normalizer",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta DDPM schedule with precomputed posterior terms."""

    betas: np.ndarray  # (K,)
    alphas: np.ndarray
    alpha_bars: np.ndarray
    alpha_bars_prev: np.ndarray  # alpha_bar_{k-1} with alpha_bar_0 = 1
    sigmas: np.ndarray  # posterior stddev, sigma_1 = 0

    def __post_init__(self) -> None:
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("schedule needs at least one step")
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(b) < 0.0):
            raise ValueError("betas must be non-decreasing")
        ab = np.asarray(self.alpha_bars, dtype=np.float64)
        if np.any(np.diff(ab) >= 0.0) or np.any(ab <= 0.0) or np.any(ab >= 1.0):
            raise ValueError("alpha_bar must be strictly decreasing in (0, 1)")

    @property
    def k_steps(self) -> int:
        return self.betas.shape[0]


def make_schedule(
    k_steps: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    if k_steps < 1:
        raise ValueError("k_steps must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if k_steps == 1:
        betas = np.array([beta_start])
    else:
        betas = np.linspace(beta_start, beta_end, k_steps)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    alpha_bars_prev = np.concatenate([[1.0], alpha_bars[:-1]])
    sigmas = np.sqrt(betas * (1.0 - alpha_bars_prev) / (1.0 - alpha_bars))
    return NoiseSchedule(
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        alpha_bars_prev=alpha_bars_prev,
        sigmas=sigmas,
    )


@dataclass(frozen=True)
class ActionChunk:
    """T_p x A action sequence."""

    actions: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.actions, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("actions must be (T_p, A)")
        if not np.all(np.isfinite(a)):
            raise ValueError("actions must be finite")
        object.__setattr__(self, "actions", a)


@dataclass(frozen=True)
class ActionNormalizer:
    """Per-dimension affine map between env units and [-1, 1].

    Constant dimensions (max == min) normalize to 0 and denormalize back
    to the constant.
    """

    lo: np.ndarray  # (A,)
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("normalizer bounds must be matching vectors")
        if np.any(hi < lo):
            raise ValueError("normalizer needs hi >= lo")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def _span(self) -> np.ndarray:
        return np.where(self.hi > self.lo, self.hi - self.lo, 1.0)

    def normalize(self, actions: np.ndarray) -> np.ndarray:
        a = np.asarray(actions, dtype=np.float64)
        out = 2.0 * (a - self.lo) / self._span() - 1.0
        return np.where(self.hi > self.lo, out, 0.0)

    def denormalize(self, actions: np.ndarray) -> np.ndarray:
        a = np.asarray(actions, dtype=np.float64)
        return np.where(
            self.hi > self.lo, self.lo + (a + 1.0) * self._span() / 2.0, self.lo
        )

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @staticmethod
    def from_dict(d: Mapping) -> "ActionNormalizer":
        return ActionNormalizer(np.asarray(d["lo"]), np.asarray(d["hi"]))


def fit_action_normalizer(actions: np.ndarray) -> ActionNormalizer:
    """Per-dimension min/max over an (N, A) stack of env-unit actions."""
    a = np.asarray(actions, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError("need an (N, A) action stack")
    return ActionNormalizer(lo=a.min(axis=0), hi=a.max(axis=0))


def add_noise(
    a0: np.ndarray, k: int, eps: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """Forward-noise a clean chunk to step k."""
    if not 1 <= k <= sched.k_steps:
        raise ValueError(f"k must be in [1, {sched.k_steps}]")
    ab = sched.alpha_bars[k - 1]
    return np.sqrt(ab) * np.asarray(a0) + np.sqrt(1.0 - ab) * np.asarray(eps)


@dataclass(frozen=True)
class DenoiserConfig:
    t_p: int = 16
    a_dim: int = 3
    hidden: tuple[int, ...] = (256, 256)
    time_embed: int = 32

    def __post_init__(self) -> None:
        if self.t_p < 1 or self.a_dim < 1:
            raise ValueError("horizon and action dim must be >= 1")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("need at least one positive hidden width")
        if self.time_embed < 2 or self.time_embed % 2:
            raise ValueError("time embedding width must be even and >= 2")


def make_denoiser(config: DenoiserConfig, s_dim: int) -> Network:
    """MLP over [flat chunk, conditioning, time embedding]."""
    flat = config.t_p * config.a_dim
    layers = [
        LayerSpec("concat", dims=(s_dim,), extra="cond"),
        LayerSpec("sinusoidal-time-embed", dims=(config.time_embed,), extra="k"),
    ]
    d = flat + s_dim + config.time_embed
    for h in config.hidden:
        layers.append(LayerSpec("dense", dims=(d, h)))
        layers.append(LayerSpec("activation"))
        d = h
    layers.append(LayerSpec("dense", dims=(d, flat)))
    return Network("den", flat, layers)


def predict_noise(
    net: Network,
    params: ParameterStore,
    a_k: np.ndarray,
    s_embed: np.ndarray,
    k: int,
) -> np.ndarray:
    """One denoiser evaluation; returns noise in chunk shape."""
    a_k = np.asarray(a_k)
    if a_k.ndim != 2 or a_k.shape[0] * a_k.shape[1] != net.in_dim:
        raise ValueError(f"chunk shape {a_k.shape} does not flatten to {net.in_dim}")
    y, _ = forward(
        net, params, a_k.reshape(-1), extras={"cond": np.asarray(s_embed), "k": k}
    )
    return np.asarray(y).reshape(a_k.shape)


@dataclass(frozen=True)
class TrainingItem:
    """One (clean chunk, conditioning) pair.

    Conditioning is either precomputed frame plans plus the concatenated
    proprio history, or a fixed embedding (used by synthetic tests). The
    key seeds this item's noise stream and orders the batch.
    """

    key: int
    actions: np.ndarray  # (T_p, A), normalized
    plans: tuple[FramePlan, ...] | None = None
    proprio: np.ndarray | None = None
    embed: np.ndarray | None = None


def _draw_item_noise(item: TrainingItem, epoch: int, sched: NoiseSchedule):
    rng = np.random.default_rng([epoch, item.key])
    k = int(rng.integers(1, sched.k_steps + 1))
    eps = rng.standard_normal(np.asarray(item.actions).shape)
    return k, eps


def _batch_inputs(
    items: Sequence[TrainingItem],
    params: ParameterStore,
    enc_config: EncoderConfig | None,
    epoch: int,
    sched: NoiseSchedule,
):
    if len(set(i.key for i in items)) != len(items):
        raise ValueError("item keys must be unique within a batch")
    items = sorted(items, key=lambda i: i.key)
    a0 = np.stack([np.asarray(i.actions, dtype=np.float64) for i in items])
    drawn = [_draw_item_noise(i, epoch, sched) for i in items]
    ks = np.array([k for k, _ in drawn], dtype=np.float64)
    eps = np.stack([e for _, e in drawn])
    ab = sched.alpha_bars[ks.astype(int) - 1][:, None, None]
    a_k = np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps
    enc_cache = None
    if items[0].embed is not None:
        embeds = np.stack([np.asarray(i.embed, dtype=np.float64) for i in items])
    else:
        if enc_config is None:
            raise ValueError("items carry plans but no encoder config was given")
        plans = [list(i.plans) for i in items]
        pros = np.stack([np.asarray(i.proprio, dtype=np.float64) for i in items])
        embeds, enc_cache = encode_batch(plans, pros, params, enc_config)
    b, t_p, a_dim = a_k.shape
    return items, a_k.reshape(b, t_p * a_dim), eps.reshape(b, t_p * a_dim), ks, embeds, enc_cache


def training_loss(
    items: Sequence[TrainingItem],
    net: Network,
    params: ParameterStore,
    sched: NoiseSchedule,
    enc_config: EncoderConfig | None = None,
    epoch: int = 0,
    predict_fn: Callable | None = None,
) -> float:
    """Mean squared noise-prediction error over batch, horizon, and dims.

    ``predict_fn`` (a_k_flat, embeds, ks) -> eps_hat_flat substitutes the
    denoiser, which lets tests probe the loss with oracle predictors.
    """
    _, a_k, eps, ks, embeds, _ = _batch_inputs(items, params, enc_config, epoch, sched)
    if predict_fn is not None:
        eps_hat = np.asarray(predict_fn(a_k, embeds, ks), dtype=np.float64)
    else:
        eps_hat, _ = forward(net, params, a_k, extras={"cond": embeds, "k": ks})
    return float(np.mean((np.asarray(eps_hat, dtype=np.float64) - eps) ** 2))


def training_step(
    items: Sequence[TrainingItem],
    net: Network,
    params: ParameterStore,
    sched: NoiseSchedule,
    enc_config: EncoderConfig | None = None,
    epoch: int = 0,
) -> float:
    """training_loss plus gradient accumulation into ``params``."""
    _, a_k, eps, ks, embeds, enc_cache = _batch_inputs(
        items, params, enc_config, epoch, sched
    )
    eps_hat, tape = forward(net, params, a_k, extras={"cond": embeds, "k": ks})
    diff = np.asarray(eps_hat, dtype=np.float64) - eps
    loss = float(np.mean(diff**2))
    upstream = (2.0 / diff.size) * diff
    _, dextras = backward(net, params, tape, upstream)
    if enc_cache is not None:
        encode_backward(enc_cache, dextras["cond"], params)
    return loss


def sample_actions(
    net: Network,
    config: DenoiserConfig,
    params: ParameterStore,
    s_embed: np.ndarray,
    sched: NoiseSchedule,
    seed: int,
    normalizer: ActionNormalizer | None = None,
    noise_scale: float = 1.0,
) -> ActionChunk:
    """Ancestral DDPM sampling from pure noise.

    The k = 1 step adds no noise; ``noise_scale`` = 0 makes the whole
    reverse chain deterministic (used by closed-form tests). The result is
    clipped to the normalized range and de-normalized when a normalizer is
    given.
    """
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((config.t_p, config.a_dim))
    flat = a.reshape(-1)
    cond = np.asarray(s_embed, dtype=np.float64)
    for k in range(sched.k_steps, 0, -1):
        y, _ = forward(net, params, flat, extras={"cond": cond, "k": k})
        alpha = sched.alphas[k - 1]
        ab = sched.alpha_bars[k - 1]
        flat = (flat - (1.0 - alpha) / np.sqrt(1.0 - ab) * np.asarray(y)) / np.sqrt(alpha)
        if k > 1 and noise_scale != 0.0:
            flat = flat + noise_scale * sched.sigmas[k - 1] * rng.standard_normal(
                flat.shape
            )
        if not np.all(np.isfinite(flat)):
            raise FloatingPointError("sampler diverged")
    out = flat.reshape(config.t_p, config.a_dim)
    if normalizer is not None:
        out = normalizer.denormalize(np.clip(out, -1.0, 1.0))
    return ActionChunk(actions=out)


@dataclass(frozen=True)
class Rollout:
    """One closed-loop episode."""

    actions: np.ndarray  # (steps, A) executed actions
    success: bool
    steps: int


def receding_horizon_execute(
    sample_fn: Callable[[Sequence[PolicyObservation]], ActionChunk],
    env,
    t_o: int,
    t_a: int,
    step_cap: int,
) -> Rollout:
    """Alternate chunk sampling with executing its first t_a actions.

    ``env`` provides reset() -> PolicyObservation, step(action) ->
    PolicyObservation, and success() -> bool. Stops at the first
    post-step success check or at the step cap.
    """
    if t_o < 1 or t_a < 1 or step_cap < 0:
        raise ValueError("need t_o >= 1, t_a >= 1, step_cap >= 0")
    obs = env.reset()
    history = [obs] * t_o
    executed: list[np.ndarray] = []
    success = False
    while len(executed) < step_cap and not success:
        chunk = sample_fn(list(history))
        for action in chunk.actions[:t_a]:
            obs = env.step(np.asarray(action, dtype=np.float64))
            history = history[1:] + [obs]
            executed.append(np.asarray(action, dtype=np.float64))
            success = bool(env.success())
            if success or len(executed) >= step_cap:
                break
    actions = (
        np.stack(executed) if executed else np.zeros((0, 0), dtype=np.float64)
    )
    return Rollout(actions=actions, success=success, steps=len(executed))


def make_policy_sampler(
    net: Network,
    config: DenoiserConfig,
    params: ParameterStore,
    enc_config: EncoderConfig,
    sched: NoiseSchedule,
    seed: int,
    normalizer: ActionNormalizer | None = None,
    noise_scale: float = 1.0,
) -> Callable[[Sequence[PolicyObservation]], ActionChunk]:
    """Bundle encoder + denoiser into a sample_fn for closed-loop runs.

    Each call advances an internal counter so repeated sampling within an
    episode stays deterministic given the episode seed.
    """
    calls = [0]

    def sample(history: Sequence[PolicyObservation]) -> ActionChunk:
        embed = encode(history, params, enc_config)
        calls[0] += 1
        call_seed = int(np.random.default_rng([seed, calls[0]]).integers(2**31))
        return sample_actions(
            net,
            config,
            params,
            embed.vector,
            sched,
            seed=call_seed,
            normalizer=normalizer,
            noise_scale=noise_scale,
        )

    return sample
