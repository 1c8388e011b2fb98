"""Demo collection: scripted-expert episodes plus reference descriptors.

Every episode slot gets its own RNG keys ([seed, slot, attempt, stream]),
so collection order cannot change the output and a failed attempt only
redraws its own slot. Reference descriptors are recorded from a dedicated
reference scene (instance 0): each part's pixels are found in the part-id
maps, saved as an explicit pixel selection, and averaged into one
descriptor per part.

With ``features_dir`` set, every feature image (demo frames and the
reference views) is replaced by a raw float32 file of the same block
layout, which is how externally computed feature maps enter the pipeline.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..geometry import FeatureImage
from ..semantics import references_from_selection, save_reference_selection
from ..sim import Expert, check_success, render_part_ids, render_views, reset_scene, step
from .config import RunConfig, task_spec
from .dataset import Episode, read_feature_block, write_episode, write_manifest
from .fields import camera_rig, instance_for, save_references

__all__ = ["collect_demos", "record_references"]

# Per-part pixel budget per reference view; keeps the selection file small
# while averaging enough pixels to suppress the per-pixel noise.
REF_PIXELS_PER_VIEW = 64
_REF_KEY = 30000


def _feature_path(features_dir: Path, name: str) -> Path:
    path = features_dir / name
    if not path.exists():
        raise FileNotFoundError(f"feature substitution file missing: {path}")
    return path


def record_references(
    config: RunConfig,
    out_dir: Path,
    seed: int,
    features_dir: Path | None,
):
    """Render the reference scene and derive one descriptor per part."""
    instance = instance_for(config, seed, "train", 0)
    state = reset_scene(instance, np.random.default_rng([seed, _REF_KEY, 0]))
    cams = camera_rig(config)
    rng_pix = (
        np.random.default_rng([seed, _REF_KEY, 1]) if config.sigma_pix > 0.0 else None
    )
    rendered = render_views(state, cams, config.image_size, config.sigma_pix, rng_pix)
    part_ids = render_part_ids(state, cams, config.image_size)

    ref_dir = out_dir / "references"
    ref_dir.mkdir(parents=True, exist_ok=True)
    images = []
    image_names = []
    for v, (feat, _) in enumerate(rendered):
        name = f"ref_v{v}.f32"
        if features_dir is not None:
            feat = FeatureImage(
                read_feature_block(
                    _feature_path(features_dir, name),
                    config.image_size,
                    config.image_size,
                    config.f_dim,
                )
            )
        (ref_dir / name).write_bytes(
            np.ascontiguousarray(feat.values, dtype="<f4").tobytes()
        )
        images.append(feat)
        image_names.append(name)

    parts: dict[str, list[tuple[int, float, float]]] = {}
    for part_ix, part in enumerate(instance.parts):
        picks: list[tuple[int, float, float]] = []
        for v, pid in enumerate(part_ids):
            ys, xs = np.nonzero(pid == part_ix)
            for y, x in list(zip(ys, xs))[:REF_PIXELS_PER_VIEW]:
                picks.append((v, float(x), float(y)))
        parts[part.name] = picks

    save_reference_selection(ref_dir / "selection.json", parts, images=image_names)
    refs = references_from_selection(images, parts)
    save_references(ref_dir / "references.json", refs, config)
    return refs, ref_dir / "references.json"


def _run_episode(config: RunConfig, instance, seed: int, slot: int, attempt: int):
    """One expert attempt; returns an Episode or None on failure."""
    task = task_spec(config)
    cams = camera_rig(config)
    state = reset_scene(instance, np.random.default_rng([seed, slot, attempt, 0]))
    expert = Expert(task, np.random.default_rng([seed, slot, attempt, 1]))
    rng_pix = (
        np.random.default_rng([seed, slot, attempt, 2])
        if config.sigma_pix > 0.0
        else None
    )
    feats, depths, valids, robots, actions = [], [], [], [], []
    success = False
    for _ in range(task.step_cap):
        rendered = render_views(
            state, cams, config.image_size, config.sigma_pix, rng_pix
        )
        feats.append(np.stack([f.values for f, _ in rendered]))
        depths.append(np.stack([d.values for _, d in rendered]))
        valids.append(np.stack([d.validity for _, d in rendered]))
        robots.append(
            np.array(
                [state.gripper[0], state.gripper[1], 1.0 if state.grip_closed else -1.0],
                dtype=np.float32,
            )
        )
        try:
            action = expert.action(state)
        except ValueError:
            return None
        actions.append(np.asarray(action, dtype=np.float32))
        state = step(state, action)
        if check_success(state, task):
            success = True
            break
    if not success:
        return None
    return Episode(
        instance_id=instance.instance_id,
        split="train",
        seed=slot,
        success=True,
        features=np.stack(feats),
        depth=np.stack(depths),
        validity=np.stack(valids),
        robot=np.stack(robots),
        actions=np.stack(actions),
    )


def _substitute_features(episode: Episode, config: RunConfig, features_dir: Path, slot: int) -> Episode:
    feats = episode.features.copy()
    for t in range(episode.steps):
        for v in range(config.n_cameras):
            name = f"ep{slot:03d}_s{t:03d}_v{v}.f32"
            feats[t, v] = read_feature_block(
                _feature_path(features_dir, name),
                config.image_size,
                config.image_size,
                config.f_dim,
            )
    return Episode(
        instance_id=episode.instance_id,
        split=episode.split,
        seed=episode.seed,
        success=episode.success,
        features=feats,
        depth=episode.depth,
        validity=episode.validity,
        robot=episode.robot,
        actions=episode.actions,
    )


def collect_demos(
    config: RunConfig,
    out_dir: str | Path,
    seed: int = 0,
    features_dir: str | Path | None = None,
) -> Path:
    """Write the demo dataset; returns its directory.

    Aborts when expert failures exceed 5% of the requested episode count:
    the expert is supposed to be near-perfect, so that rate signals a
    misconfigured simulation rather than bad luck.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    features_dir = Path(features_dir) if features_dir is not None else None

    record_references(config, out_dir, seed, features_dir)

    instances = [
        instance_for(config, seed, "train", i) for i in range(config.demo_instances)
    ]
    max_failures = int(0.05 * config.n_demos)
    failures = 0
    entries = []
    for slot in range(config.n_demos):
        instance = instances[slot % config.demo_instances]
        attempt = 0
        episode = None
        while episode is None:
            episode = _run_episode(config, instance, seed, slot, attempt)
            if episode is None:
                failures += 1
                if failures > max_failures:
                    raise RuntimeError(
                        f"expert failure rate above 5% ({failures} failures): "
                        "sim misconfigured"
                    )
                attempt += 1
        if features_dir is not None:
            episode = _substitute_features(episode, config, features_dir, slot)
        name = f"ep{slot:03d}.gdpe"
        write_episode(out_dir / name, episode)
        meta = episode.meta(name)
        meta["attempts"] = attempt + 1
        entries.append(meta)
    write_manifest(out_dir, config, entries)
    return out_dir
