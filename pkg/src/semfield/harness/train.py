"""Policy training over a collected demo dataset.

Every (episode, step) pair becomes one training item: the normalized
action chunk starting there (padded by repeating the terminal action)
conditioned on the last t_o observation frames. Frame grouping geometry
is precomputed once, so the optimization loop runs on matrix work alone.
The action normalizer rides inside the checkpoint as the ``norm.lo`` /
``norm.hi`` entries; their gradients stay zero, so the optimizer never
touches them.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..encoder import embedding_width, init_encoder_params, plan_frame
from ..netcore import Network, ParameterStore, adam_step, save_checkpoint
from ..policy import (
    ActionNormalizer,
    TrainingItem,
    fit_action_normalizer,
    make_denoiser,
    make_schedule,
    training_loss,
    training_step,
)
from .config import (
    RunConfig,
    collect_hash,
    denoiser_config,
    encoder_config,
    task_spec,
)
from .dataset import ROBOT_DIM, load_dataset
from .fields import episode_fields_cached, load_references

__all__ = [
    "policy_components",
    "expected_param_shapes",
    "prepare_items",
    "train_policy",
]


def policy_components(config: RunConfig, a_dim: int):
    """(denoiser net, denoiser config, encoder config, schedule)."""
    enc_cfg = encoder_config(config)
    den_cfg = denoiser_config(config, a_dim)
    net = make_denoiser(den_cfg, embedding_width(enc_cfg))
    sched = make_schedule(config.k_steps, config.beta_start, config.beta_end)
    return net, den_cfg, enc_cfg, sched


def _init_params(
    config: RunConfig, net: Network, m_channels: int, seed: int
) -> ParameterStore:
    # float32: checkpoints store float32 anyway, and the single-core time
    # budget matters; gradient verification runs its own float64 stores.
    store = ParameterStore(np.float32)
    init_encoder_params(
        store,
        np.random.default_rng([seed, 11]),
        encoder_config(config),
        m_channels,
        ROBOT_DIM,
    )
    net.init_params(store, np.random.default_rng([seed, 7]), zero_final_dense=True)
    return store


def expected_param_shapes(config: RunConfig, m_channels: int) -> dict[str, tuple]:
    a_dim = task_spec(config).action_dim
    net, _, _, _ = policy_components(config, a_dim)
    store = _init_params(config, net, m_channels, seed=0)
    store.add("norm.lo", np.zeros(a_dim))
    store.add("norm.hi", np.zeros(a_dim))
    return {name: store.values[name].shape for name in store.names()}


def prepare_items(
    dataset_dir: str | Path,
    config: RunConfig,
    refs,
    ablate: bool,
) -> tuple[list[TrainingItem], ActionNormalizer]:
    """Load episodes, build (or reuse) field caches, and emit items."""
    manifest, episodes = load_dataset(dataset_dir)
    if manifest.get("collect_hash") != collect_hash(config):
        raise ValueError("dataset was collected under a different config")
    normalizer = fit_action_normalizer(
        np.concatenate([ep.actions.astype(np.float64) for ep in episodes])
    )
    enc_cfg = encoder_config(config)
    stride = config.step_cap + 1
    items: list[TrainingItem] = []
    for ep_ix, (entry, episode) in enumerate(zip(manifest["episodes"], episodes)):
        fields = episode_fields_cached(
            dataset_dir, Path(entry["file"]).stem, episode, config, refs
        )
        acts = normalizer.normalize(episode.actions.astype(np.float64))
        steps = episode.steps
        plans_by_t = []
        for t in range(steps):
            channels = fields["sims"][t]
            if ablate:
                channels = np.zeros_like(channels)
            plans_by_t.append(plan_frame(fields["points"][t], channels, enc_cfg))
        for t in range(steps):
            chunk = acts[np.minimum(np.arange(t, t + config.t_p), steps - 1)]
            frame_ts = [max(t - (config.t_o - 1) + j, 0) for j in range(config.t_o)]
            items.append(
                TrainingItem(
                    key=ep_ix * stride + t,
                    actions=chunk,
                    plans=tuple(plans_by_t[ft] for ft in frame_ts),
                    proprio=np.concatenate(
                        [episode.robot[ft].astype(np.float64) for ft in frame_ts]
                    ),
                )
            )
    return items, normalizer


def _save_loss_curve(path: Path, losses: list[float]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(losses)), losses, linewidth=0.8)
    ax.set_xlabel("training step")
    ax.set_ylabel("noise-prediction MSE")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def train_policy(
    config: RunConfig,
    dataset_dir: str | Path,
    out_dir: str | Path,
    seed: int = 0,
    ablate: bool | None = None,
) -> dict:
    """Optimize the policy on the dataset; writes checkpoint + loss trace."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if ablate is None:
        ablate = config.ablate_semantics
    refs = load_references(Path(dataset_dir) / "references" / "references.json")
    items, normalizer = prepare_items(dataset_dir, config, refs, ablate)

    a_dim = task_spec(config).action_dim
    net, _, enc_cfg, sched = policy_components(config, a_dim)
    params = _init_params(config, net, refs.m, seed)
    params.add("norm.lo", normalizer.lo)
    params.add("norm.hi", normalizer.hi)

    losses = [
        training_loss(
            items[: config.batch_size], net, params, sched, enc_cfg, epoch=0
        )
    ]
    for s in range(1, config.train_steps + 1):
        rng = np.random.default_rng([seed, 5000 + s])
        picks = rng.choice(
            len(items), size=min(config.batch_size, len(items)), replace=False
        )
        batch = [items[i] for i in picks]
        # Cosine decay to a 10% floor; the late low-lr phase is what sharpens
        # the final-approach actions enough to close the grasp reliably.
        frac = s / max(config.train_steps, 1)
        lr = config.learning_rate * (0.1 + 0.45 * (1.0 + math.cos(math.pi * frac)))
        params.zero_grads()
        try:
            loss = training_step(batch, net, params, sched, enc_cfg, epoch=s)
            adam_step(params, lr=lr)
        except FloatingPointError as err:
            raise RuntimeError("diverged") from err
        if not math.isfinite(loss):
            raise RuntimeError("diverged")
        losses.append(loss)

    checkpoint = out_dir / "checkpoint.gdpc"
    save_checkpoint(checkpoint, params)
    (out_dir / "loss.csv").write_text(
        "step,loss\n" + "\n".join(f"{i},{v!r}" for i, v in enumerate(losses)) + "\n"
    )
    _save_loss_curve(out_dir / "loss_curve.png", losses)
    tail = losses[-min(50, len(losses)):]
    return {
        "checkpoint": str(checkpoint),
        "loss_first": losses[0],
        "loss_final": float(np.mean(tail)),
        "steps": config.train_steps,
        "ablate_semantics": ablate,
    }
