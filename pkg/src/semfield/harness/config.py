"""Flat `key = value` run configuration.

One file drives every verb: the same config must be passed to collect,
train, eval, and heatmap so that cameras, field sizes, and network shapes
agree. The canonical serialization (sorted keys, one per line) feeds a
sha256 whose prefix keys on-disk caches.

Category/task keys: ``category`` (name), ``f_dim``, ``sigma_inst``
(per-instance descriptor perturbation), ``task`` in {grasp-handle,
orient-handle-+x}. Camera keys: ``n_cameras``, ``cam_radius``,
``cam_height``, ``image_size``, ``focal``, ``sigma_pix``. Field keys:
``cloud_k``, ``tau_w``, ``mu_occ``. Encoder keys: ``enc_centroids1/2``,
``enc_radius1/2``, ``enc_cap``, ``enc_width1/2``, ``enc_global``.
Policy keys: ``k_steps``, ``beta_start``, ``beta_end``, ``t_o``, ``t_p``,
``t_a``, ``den_width``, ``den_depth``, ``time_embed``. Run keys:
``n_demos``, ``demo_instances``, ``eval_instances``, ``eval_episodes``,
``step_cap``, ``train_steps``, ``batch_size``, ``learning_rate``,
``ablate_semantics``.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

from ..encoder import EncoderConfig
from ..policy import DenoiserConfig, make_schedule
from ..sim import CategoryConfig, TaskSpec

__all__ = [
    "RunConfig",
    "default_config",
    "parse_config",
    "load_config",
    "config_hash",
    "collect_hash",
    "field_hash",
    "config_text",
    "category_config",
    "task_spec",
    "encoder_config",
    "denoiser_config",
]


@dataclass(frozen=True)
class RunConfig:
    category: str = "tool"
    f_dim: int = 16
    sigma_inst: float = 0.04
    task: str = "grasp-handle"

    n_cameras: int = 4
    cam_radius: float = 0.45
    cam_height: float = 0.45
    image_size: int = 64
    focal: float = 128.0
    sigma_pix: float = 0.02

    cloud_k: int = 160
    tau_w: float = 0.02
    mu_occ: float = 0.01

    enc_centroids1: int = 32
    enc_centroids2: int = 8
    enc_radius1: float = 0.04
    enc_radius2: float = 0.12
    enc_cap: int = 8
    enc_width1: int = 32
    enc_width2: int = 64
    enc_global: int = 128

    k_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    t_o: int = 2
    t_p: int = 16
    t_a: int = 8
    den_width: int = 128
    den_depth: int = 2
    time_embed: int = 32

    n_demos: int = 60
    demo_instances: int = 5
    eval_instances: int = 5
    eval_episodes: int = 20
    step_cap: int = 120
    train_steps: int = 10000
    batch_size: int = 16
    learning_rate: float = 1e-3
    ablate_semantics: bool = False

    def __post_init__(self) -> None:
        if self.n_cameras < 1 or self.image_size < 8:
            raise ValueError("need n_cameras >= 1 and image_size >= 8")
        if self.cam_radius <= 0.0 or self.cam_height <= 0.0 or self.focal <= 0.0:
            raise ValueError("camera geometry must be positive")
        if self.sigma_pix < 0.0:
            raise ValueError("sigma_pix must be >= 0")
        if self.cloud_k < 1 or self.cloud_k < self.enc_centroids1:
            raise ValueError("cloud_k must be >= enc_centroids1 >= 1")
        if self.tau_w <= 0.0 or self.mu_occ < 0.0:
            raise ValueError("tau_w must be > 0 and mu_occ >= 0")
        if not 1 <= self.t_a <= self.t_p:
            raise ValueError("need 1 <= t_a <= t_p")
        if self.den_depth < 1 or self.den_width < 1:
            raise ValueError("denoiser needs positive width and depth")
        if min(self.n_demos, self.demo_instances, self.eval_instances) < 1:
            raise ValueError("counts must be >= 1")
        if self.eval_episodes < 0 or self.step_cap < 1:
            raise ValueError("eval_episodes must be >= 0 and step_cap >= 1")
        if self.train_steps < 0 or self.batch_size < 1:
            raise ValueError("train_steps must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        # Delegate the rest to the module constructors they feed.
        category_config(self)
        task_spec(self)
        encoder_config(self)
        denoiser_config(self, task_spec(self).action_dim)
        make_schedule(self.k_steps, self.beta_start, self.beta_end)


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def default_config() -> RunConfig:
    return RunConfig()


def _convert(key: str, raw: str):
    kind = _FIELDS[key]
    if kind == "bool":
        if raw not in ("true", "false"):
            raise ValueError(f"key {key!r}: expected true/false, got {raw!r}")
        return raw == "true"
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse flat `key = value` lines; '#' starts a comment.

    Unknown and repeated keys are errors so a typo cannot silently fall
    back to a default.
    """
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _FIELDS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: repeated key {key!r}")
        values[key] = _convert(key, raw)
    return RunConfig(**values)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return default_config()
    return parse_config(Path(path).read_text())


def _canonical_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_text(config: RunConfig, keys=None) -> str:
    """Canonical serialization: sorted keys, one `key = value` per line."""
    lines = [
        f"{name} = {_canonical_value(getattr(config, name))}"
        for name in sorted(keys if keys is not None else _FIELDS)
    ]
    return "\n".join(lines) + "\n"


# Keys that determine what collect writes to disk, and additionally what
# the per-frame fields look like. Hashing these subsets lets a dataset or
# field cache survive changes to unrelated keys (training length, widths).
COLLECT_KEYS = (
    "category", "f_dim", "sigma_inst", "task",
    "n_cameras", "cam_radius", "cam_height", "image_size", "focal", "sigma_pix",
    "n_demos", "demo_instances", "step_cap",
)
FIELD_KEYS = COLLECT_KEYS + ("cloud_k", "tau_w", "mu_occ")


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(config_text(config).encode("utf-8")).hexdigest()


def collect_hash(config: RunConfig) -> str:
    return hashlib.sha256(config_text(config, COLLECT_KEYS).encode("utf-8")).hexdigest()


def field_hash(config: RunConfig) -> str:
    return hashlib.sha256(config_text(config, FIELD_KEYS).encode("utf-8")).hexdigest()


def category_config(config: RunConfig) -> CategoryConfig:
    return CategoryConfig(
        name=config.category, f_dim=config.f_dim, sigma_inst=config.sigma_inst
    )


def task_spec(config: RunConfig) -> TaskSpec:
    return TaskSpec(config.task, step_cap=config.step_cap)


def encoder_config(config: RunConfig) -> EncoderConfig:
    return EncoderConfig(
        centroids=(config.enc_centroids1, config.enc_centroids2),
        radii=(config.enc_radius1, config.enc_radius2),
        neighbor_cap=config.enc_cap,
        mlp1=(config.enc_width1, config.enc_width1),
        mlp2=(config.enc_width2, config.enc_width2),
        global_width=config.enc_global,
        t_o=config.t_o,
    )


def denoiser_config(config: RunConfig, a_dim: int) -> DenoiserConfig:
    return DenoiserConfig(
        t_p=config.t_p,
        a_dim=a_dim,
        hidden=(config.den_width,) * config.den_depth,
        time_embed=config.time_embed,
    )
