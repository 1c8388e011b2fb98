"""Top-down semantic-field heatmaps.

One orthographic image per reference channel: every supported,
non-padding field point is splatted as a 3x3 patch at its (x, y) cell,
per-pixel similarity resolved by max. Colormap, documented here and
fixed: similarity s in [-1, 1] maps to t = (s + 1) / 2, then
(r, g, b) = (min(3t, 1), min(max(3t - 1, 0), 1), min(max(3t - 2, 0), 1))
scaled to 8-bit, i.e. black -> red -> yellow -> white with increasing
similarity; cells no point reaches are dark blue (0, 0, 64). Files are
binary PPM (P6, 8-bit) plus one matplotlib overview PNG.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..sim import CLOUD_BOUNDS, render_views, reset_scene
from .config import RunConfig
from .fields import camera_rig, instance_for, load_references, scene_observation
from ..fusion import build_descriptor_field
from ..semantics import compute_semantic_field

__all__ = ["export_heatmap", "similarity_to_rgb", "write_ppm", "read_ppm"]

BACKGROUND_RGB = (0, 0, 64)
_HEAT_KEY = 40000


def similarity_to_rgb(sims: np.ndarray) -> np.ndarray:
    """Vectorized colormap; sims (...,) -> uint8 (..., 3)."""
    t = (np.asarray(sims, dtype=np.float64) + 1.0) / 2.0
    r = np.clip(3.0 * t, 0.0, 1.0)
    g = np.clip(3.0 * t - 1.0, 0.0, 1.0)
    b = np.clip(3.0 * t - 2.0, 0.0, 1.0)
    return np.round(255.0 * np.stack([r, g, b], axis=-1)).astype(np.uint8)


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    h, w, c = rgb.shape
    if c != 3 or rgb.dtype != np.uint8:
        raise ValueError("write_ppm expects (H, W, 3) uint8")
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + rgb.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ValueError("not an 8-bit P6 PPM")
    w, h = int(fields[1]), int(fields[2])
    pos += 1
    data = np.frombuffer(raw, dtype=np.uint8, offset=pos)
    if data.size != w * h * 3:
        raise ValueError("PPM payload size mismatch")
    return data.reshape(h, w, 3).copy()


def _splat(points: np.ndarray, sims: np.ndarray, res: int) -> np.ndarray:
    """Max-splat similarities onto a res x res top-down grid; NaN = empty.

    -inf is the working sentinel because np.maximum.at would propagate
    NaN instead of overwriting it.
    """
    lo, hi = CLOUD_BOUNDS.lo, CLOUD_BOUNDS.hi
    grid = np.full(res * res, -np.inf)
    cols = np.floor((points[:, 0] - lo[0]) / (hi[0] - lo[0]) * res).astype(int)
    # +y is up in the image
    rows = np.floor((hi[1] - points[:, 1]) / (hi[1] - lo[1]) * res).astype(int)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r = np.clip(rows + dr, 0, res - 1)
            c = np.clip(cols + dc, 0, res - 1)
            np.maximum.at(grid, r * res + c, sims)
    grid = grid.reshape(res, res)
    return np.where(np.isneginf(grid), np.nan, grid)


def export_heatmap(
    config: RunConfig,
    scene_seed: int,
    refs_path: str | Path,
    out_dir: str | Path,
    res: int = 96,
) -> dict:
    """Render one heatmap per reference channel for a fresh train scene."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    refs = load_references(refs_path)
    instance = instance_for(config, scene_seed, "train", 0)
    state = reset_scene(instance, np.random.default_rng([scene_seed, _HEAT_KEY, 0]))
    cams = camera_rig(config)
    rng_pix = (
        np.random.default_rng([scene_seed, _HEAT_KEY, 1])
        if config.sigma_pix > 0.0
        else None
    )
    rendered = render_views(state, cams, config.image_size, config.sigma_pix, rng_pix)
    views = [(cam, f, d) for cam, (f, d) in zip(cams, rendered)]
    field = build_descriptor_field(
        views, CLOUD_BOUNDS, k=config.cloud_k,
        tau_w=config.tau_w, mu_occ=config.mu_occ, seed=0,
    )
    sem = compute_semantic_field(field, refs)
    keep = field.support_mask & ~field.pad_mask
    points = field.points[keep]

    paths = {}
    grids = {}
    for m, label in enumerate(refs.labels):
        grid = _splat(points, sem.similarities[keep, m], res)
        rgb = similarity_to_rgb(np.nan_to_num(grid, nan=-1.0))
        rgb[np.isnan(grid)] = BACKGROUND_RGB
        path = out_dir / f"heatmap_{label}.ppm"
        write_ppm(path, rgb)
        paths[label] = path
        grids[label] = grid

    overview = out_dir / "heatmap_overview.png"
    _save_overview(overview, grids, state)
    return {"channels": paths, "overview": overview, "state": state, "field": field}


def _save_overview(path: Path, grids: dict[str, np.ndarray], state) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lo, hi = CLOUD_BOUNDS.lo, CLOUD_BOUNDS.hi
    fig, axes = plt.subplots(1, len(grids), figsize=(4 * len(grids), 4))
    if len(grids) == 1:
        axes = [axes]
    for ax, (label, grid) in zip(np.atleast_1d(axes), grids.items()):
        im = ax.imshow(
            grid,
            vmin=-1.0,
            vmax=1.0,
            cmap="inferno",
            extent=(lo[0], hi[0], lo[1], hi[1]),
        )
        ax.set_title(f"similarity to {label!r}")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
