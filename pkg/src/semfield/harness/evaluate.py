"""Closed-loop policy evaluation and the success report.

Episodes run on freshly sampled instances of the requested split with
per-episode RNG keys, so a report is reproducible from (config, seed)
alone. The report directory holds report.json, report.csv, and a success
figure. An expert-as-policy stub is available for calibrating the
harness itself: it replans by rolling the scripted expert forward on a
copy of the current scene.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..netcore import load_checkpoint
from ..policy import (
    ActionChunk,
    ActionNormalizer,
    make_policy_sampler,
    receding_horizon_execute,
)
from ..sim import Expert, step as sim_step
from .config import RunConfig, config_hash, task_spec
from .fields import PolicyEnv, instance_for, load_references
from .train import expected_param_shapes, policy_components

__all__ = ["evaluate", "load_policy"]


def load_policy(config: RunConfig, checkpoint_path: str | Path, m_channels: int):
    """Checkpoint -> (net, den_cfg, enc_cfg, sched, params, normalizer).

    Raises when the stored tensor names or shapes disagree with what the
    config implies, which is the compatibility contract.
    """
    params = load_checkpoint(checkpoint_path, dtype=np.float64)
    expected = expected_param_shapes(config, m_channels)
    found = {name: params.values[name].shape for name in params.names()}
    if found != expected:
        raise ValueError("checkpoint incompatible with config")
    normalizer = ActionNormalizer(
        lo=params.values["norm.lo"].astype(np.float64),
        hi=params.values["norm.hi"].astype(np.float64),
    )
    a_dim = task_spec(config).action_dim
    net, den_cfg, enc_cfg, sched = policy_components(config, a_dim)
    return net, den_cfg, enc_cfg, sched, params, normalizer


def _expert_sampler(env: PolicyEnv, config: RunConfig, rng: np.random.Generator):
    task = task_spec(config)
    expert = Expert(task, rng)

    def sample(history) -> ActionChunk:
        shadow = env.state
        acts = []
        for _ in range(config.t_p):
            action = expert.action(shadow)
            shadow = sim_step(shadow, action)
            acts.append(action)
        return ActionChunk(actions=np.stack(acts))

    return sample


def _save_success_figure(path: Path, entries: list[dict], rate) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if entries:
        by_instance: dict[str, list[bool]] = {}
        for entry in entries:
            by_instance.setdefault(entry["instance_id"], []).append(entry["success"])
        labels = sorted(by_instance)
        rates = [float(np.mean(by_instance[label])) for label in labels]
        ax.bar(range(len(labels)), rates, color="#4878cf")
        ax.axhline(rate, color="#d65f5f", linewidth=1.0, label=f"overall {rate:.2f}")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
        ax.set_ylim(0.0, 1.05)
        ax.set_ylabel("success rate")
        ax.legend()
    else:
        ax.text(0.5, 0.5, "no episodes", ha="center", va="center")
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def evaluate(
    config: RunConfig,
    checkpoint_path: str | Path | None,
    refs_path: str | Path,
    split: str,
    episodes: int,
    out_dir: str | Path,
    seed: int = 0,
    ablate: bool | None = None,
    expert: bool = False,
) -> dict:
    if split not in ("train", "test"):
        raise ValueError("split must be train or test")
    if ablate is None:
        ablate = config.ablate_semantics
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    refs = load_references(refs_path)
    if not expert:
        if checkpoint_path is None:
            raise ValueError("need a checkpoint unless running the expert stub")
        net, den_cfg, enc_cfg, sched, params, normalizer = load_policy(
            config, checkpoint_path, refs.m
        )

    task = task_spec(config)
    instances = [
        instance_for(config, seed, split, i) for i in range(config.eval_instances)
    ]
    entries = []
    for e in range(episodes):
        instance = instances[e % len(instances)]
        env = PolicyEnv(
            instance,
            config,
            refs,
            reset_rng=np.random.default_rng([seed, e, 0]),
            pixel_rng=np.random.default_rng([seed, e, 1]),
            ablate=ablate,
        )
        if expert:
            sample_fn = _expert_sampler(env, config, np.random.default_rng([seed, e, 3]))
        else:
            sampler_seed = int(np.random.default_rng([seed, e, 2]).integers(2**31))
            sample_fn = make_policy_sampler(
                net, den_cfg, params, enc_cfg, sched, sampler_seed, normalizer
            )
        rollout = receding_horizon_execute(
            sample_fn, env, config.t_o, config.t_a, task.step_cap
        )
        entries.append(
            {
                "episode": e,
                "instance_id": instance.instance_id,
                "success": rollout.success,
                "steps": rollout.steps,
            }
        )

    rate = float(np.mean([e["success"] for e in entries])) if entries else None
    report = {
        "split": split,
        "ablate_semantics": ablate,
        "expert": expert,
        "seed": seed,
        "config_hash": config_hash(config),
        "episodes": entries,
        "success_rate": rate,
        "rate_undefined": not entries,
        "mean_steps": float(np.mean([e["steps"] for e in entries])) if entries else None,
    }
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    lines = ["episode,instance_id,success,steps"] + [
        f"{e['episode']},{e['instance_id']},{int(e['success'])},{e['steps']}"
        for e in entries
    ]
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n")
    _save_success_figure(out_dir / "success_rate.png", entries, rate)
    return report
