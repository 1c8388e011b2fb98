"""Observation assembly shared by training and evaluation.

Per frame: render (or load) the per-view feature/depth images, fuse them
into a descriptor field over the workspace crop, compare against the
reference descriptors, and bundle points + similarity channels + robot
state into the policy observation. Training precomputes these fields per
episode and caches them on disk keyed by the config hash; ablation zeroes
the channels at assembly time, so both arms share one cache.

Instance derivation is keyed so that every verb regenerates the same
objects from (seed, split, index) alone: train-split instances use RNG
key [seed, 10000 + index], test-split [seed, 20000 + index].
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..fusion import DescriptorField, build_descriptor_field
from ..geometry import CameraModel, DepthImage, FeatureImage
from ..semantics import (
    PolicyObservation,
    ReferenceDescriptorSet,
    SemanticField,
    assemble_observation,
    compute_semantic_field,
)
from ..sim import (
    CLOUD_BOUNDS,
    ObjectInstance,
    SceneState,
    check_success,
    make_ring_cameras,
    proprio,
    render_views,
    reset_scene,
    sample_instance,
    step,
)
from .config import RunConfig, category_config, collect_hash, field_hash, task_spec
from .dataset import Episode

__all__ = [
    "camera_rig",
    "instance_for",
    "episode_views",
    "build_episode_fields",
    "field_cache_dir",
    "episode_fields_cached",
    "observation_from_fields",
    "scene_observation",
    "save_references",
    "load_references",
    "PolicyEnv",
]

_SPLIT_KEY = {"train": 10000, "test": 20000}


def camera_rig(config: RunConfig) -> list[CameraModel]:
    return make_ring_cameras(
        n=config.n_cameras,
        radius=config.cam_radius,
        height=config.cam_height,
        size=config.image_size,
        focal=config.focal,
    )


def instance_for(config: RunConfig, seed: int, split: str, index: int) -> ObjectInstance:
    if split not in _SPLIT_KEY:
        raise ValueError("split must be train or test")
    rng = np.random.default_rng([seed, _SPLIT_KEY[split] + index])
    return sample_instance(category_config(config), split, rng, index)


def episode_views(
    episode: Episode, t: int, cams: list[CameraModel]
) -> list[tuple[CameraModel, FeatureImage, DepthImage]]:
    return [
        (
            cam,
            FeatureImage(episode.features[t, v]),
            DepthImage(episode.depth[t, v], episode.validity[t, v]),
        )
        for v, cam in enumerate(cams)
    ]


def _field_and_sims(
    views, config: RunConfig, refs: ReferenceDescriptorSet
) -> tuple[DescriptorField, SemanticField]:
    field = build_descriptor_field(
        views,
        CLOUD_BOUNDS,
        k=config.cloud_k,
        tau_w=config.tau_w,
        mu_occ=config.mu_occ,
        seed=0,
    )
    return field, compute_semantic_field(field, refs)


def build_episode_fields(
    episode: Episode, config: RunConfig, refs: ReferenceDescriptorSet
) -> dict[str, np.ndarray]:
    cams = camera_rig(config)
    points, sims, support, pad = [], [], [], []
    for t in range(episode.steps):
        field, sem = _field_and_sims(episode_views(episode, t, cams), config, refs)
        points.append(field.points)
        sims.append(sem.similarities)
        support.append(field.support_mask)
        pad.append(field.pad_mask)
    return {
        "points": np.stack(points),
        "sims": np.stack(sims),
        "support": np.stack(support),
        "pad": np.stack(pad),
    }


def field_cache_dir(dataset_dir: str | Path, config: RunConfig) -> Path:
    return Path(dataset_dir) / "cache" / field_hash(config)[:12]


def episode_fields_cached(
    dataset_dir: str | Path,
    name: str,
    episode: Episode,
    config: RunConfig,
    refs: ReferenceDescriptorSet,
) -> dict[str, np.ndarray]:
    cache = field_cache_dir(dataset_dir, config)
    path = cache / f"{name}.npz"
    if path.exists():
        with np.load(path) as data:
            return {key: data[key] for key in ("points", "sims", "support", "pad")}
    fields = build_episode_fields(episode, config, refs)
    cache.mkdir(parents=True, exist_ok=True)
    np.savez(path, **fields)
    return fields


def observation_from_fields(
    fields: dict[str, np.ndarray], t: int, robot: np.ndarray, ablate: bool
) -> PolicyObservation:
    channels = fields["sims"][t]
    if ablate:
        channels = np.zeros_like(channels)
    return PolicyObservation(
        points=fields["points"][t],
        channels=channels,
        proprio=np.asarray(robot, dtype=np.float64),
        pad_mask=fields["pad"][t],
        support_mask=fields["support"][t],
    )


def scene_observation(
    state: SceneState,
    cams: list[CameraModel],
    config: RunConfig,
    refs: ReferenceDescriptorSet,
    rng_pix: np.random.Generator | None,
    ablate: bool,
) -> PolicyObservation:
    rendered = render_views(state, cams, config.image_size, config.sigma_pix, rng_pix)
    views = [(cam, feat, depth) for cam, (feat, depth) in zip(cams, rendered)]
    field, sem = _field_and_sims(views, config, refs)
    return assemble_observation(field, sem, proprio(state), ablate_semantics=ablate)


def save_references(
    path: str | Path, refs: ReferenceDescriptorSet, config: RunConfig
) -> None:
    payload = {
        "labels": list(refs.labels),
        "descriptors": [[float(x) for x in row] for row in refs.descriptors],
        "collect_hash": collect_hash(config),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_references(path: str | Path) -> ReferenceDescriptorSet:
    payload = json.loads(Path(path).read_text())
    return ReferenceDescriptorSet(
        descriptors=np.asarray(payload["descriptors"], dtype=np.float64),
        labels=tuple(payload["labels"]),
    )


class PolicyEnv:
    """Closed-loop adapter: sim scene in, policy observations out."""

    def __init__(
        self,
        instance: ObjectInstance,
        config: RunConfig,
        refs: ReferenceDescriptorSet,
        reset_rng: np.random.Generator,
        pixel_rng: np.random.Generator | None,
        ablate: bool = False,
    ):
        if config.sigma_pix > 0.0 and pixel_rng is None:
            raise ValueError("pixel noise needs an rng")
        self.instance = instance
        self.config = config
        self.refs = refs
        self.task = task_spec(config)
        self.cams = camera_rig(config)
        self.reset_rng = reset_rng
        self.pixel_rng = pixel_rng
        self.ablate = ablate
        self.state: SceneState | None = None

    def _observe(self) -> PolicyObservation:
        return scene_observation(
            self.state, self.cams, self.config, self.refs, self.pixel_rng, self.ablate
        )

    def reset(self) -> PolicyObservation:
        self.state = reset_scene(self.instance, self.reset_rng)
        return self._observe()

    def step(self, action: np.ndarray) -> PolicyObservation:
        if self.state is None:
            raise RuntimeError("step before reset")
        self.state = step(self.state, action)
        return self._observe()

    def success(self) -> bool:
        return check_success(self.state, self.task)
