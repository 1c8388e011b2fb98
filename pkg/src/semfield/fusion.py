"""Evaluate per-view features at 3D points and fuse them into descriptor fields.

For a point p and view i: project p to pixel u_i with z-depth r_i, read the
interpolated feature f_i and surface depth r'_i at u_i, and form the depth
difference dr_i = r'_i - r_i. Views rate a point as valid when it is inside
the frustum, the depth sample is valid, and the point is not hidden behind
the observed surface (dr_i >= -mu_occ). Valid views are blended with weights
proportional to exp(-|dr_i| / tau_w), so views that see the point close to
their observed surface dominate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import (
    CameraModel,
    DepthImage,
    FeatureImage,
    WorkspaceBounds,
    backproject,
    bilinear_sample,
    fps_downsample,
    project,
)

__all__ = [
    "ViewSample",
    "DescriptorField",
    "sample_view",
    "fuse",
    "build_descriptor_field",
    "DEFAULT_TAU_W",
    "DEFAULT_MU_OCC",
]

DEFAULT_TAU_W = 0.02  # meters
DEFAULT_MU_OCC = 0.01  # meters


@dataclass(frozen=True)
class ViewSample:
    """One view's reading of a 3D point; feature/depth_diff are meaningless
    when ``visible`` is false."""

    feature: np.ndarray  # (F,)
    depth_diff: float  # r' - r, meters
    visible: bool


@dataclass(frozen=True)
class DescriptorField:
    """Fixed-size point cloud with fused descriptors.

    ``support_mask`` is false for points no view observed; their descriptor
    rows are zero. ``pad_mask`` marks rows that are FPS padding (repeats of
    the last selected point when the cropped cloud held fewer than K
    points); the fixed K keeps the downstream encoder shape static.
    """

    points: np.ndarray  # (K, 3) float64, meters
    descriptors: np.ndarray  # (K, F) float64
    support_mask: np.ndarray  # (K,) bool
    pad_mask: np.ndarray = field(default=None)  # (K,) bool

    def __post_init__(self) -> None:
        if self.pad_mask is None:
            object.__setattr__(self, "pad_mask", np.zeros(len(self.points), dtype=bool))
        if not (
            len(self.points)
            == len(self.descriptors)
            == len(self.support_mask)
            == len(self.pad_mask)
        ):
            raise ValueError("field arrays must share K")
        if not np.all(np.isfinite(self.descriptors)):
            raise ValueError("descriptors must be finite")
        if np.any(np.abs(self.descriptors[~self.support_mask]) > 0.0):
            raise ValueError("unsupported rows must have zero descriptors")

    @property
    def k(self) -> int:
        return self.points.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.descriptors.shape[1]


def _sample_view_batch(
    points: np.ndarray, cam: CameraModel, feat: FeatureImage, depth: DepthImage
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized sample_view over (N, 3) points.

    Returns (features (N, F), depth_diff (N,), visible (N,)).
    """
    if depth.shape != (cam.height, cam.width) or feat.values.shape[:2] != depth.shape:
        raise ValueError("image sizes do not match camera")
    u, r, in_frustum = project(points, cam)
    r_surf, depth_ok = bilinear_sample(depth, u)
    f, _ = bilinear_sample(feat, u)
    visible = in_frustum & depth_ok
    dd = np.where(visible, r_surf - r, 0.0)
    f = np.where(visible[:, None], f, 0.0)
    return f, dd, visible


def sample_view(
    p: np.ndarray, cam: CameraModel, feat: FeatureImage, depth: DepthImage
) -> ViewSample:
    """Read one view at a single 3D point."""
    f, dd, vis = _sample_view_batch(np.asarray(p, dtype=np.float64)[None, :], cam, feat, depth)
    return ViewSample(feature=f[0], depth_diff=float(dd[0]), visible=bool(vis[0]))


def _fuse_batch(
    features: np.ndarray,
    depth_diff: np.ndarray,
    visible: np.ndarray,
    tau_w: float,
    mu_occ: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Fuse per-view readings stacked as (V, N, F) / (V, N) / (V, N).

    Returns (descriptors (N, F), supported (N,)). The reduction over views
    runs in view-index order for every point, so results are independent
    of any point-level parallelism.
    """
    valid = visible & (depth_diff >= -mu_occ)
    w = np.where(valid, np.exp(-np.abs(depth_diff) / tau_w), 0.0)
    total = w.sum(axis=0)
    supported = total > 0.0
    denom = np.where(supported, total, 1.0)
    desc = np.einsum("vn,vnf->nf", w, features) / denom[:, None]
    desc = np.where(supported[:, None], desc, 0.0)
    return desc, supported


def fuse(
    samples: Sequence[ViewSample],
    tau_w: float = DEFAULT_TAU_W,
    mu_occ: float = DEFAULT_MU_OCC,
) -> tuple[np.ndarray, bool]:
    """Blend per-view samples of one point into a single descriptor.

    Weights are ``exp(-|dr| / tau_w)`` over valid views, normalized to sum
    to one; a view is valid when visible and ``dr >= -mu_occ``. With no
    valid view the descriptor is zero and ``supported`` is false.
    """
    if not samples:
        return np.zeros(0), False
    dims = {s.feature.shape[0] for s in samples}
    if len(dims) != 1:
        raise ValueError("samples must share the feature dimension")
    if tau_w <= 0.0 or mu_occ < 0.0:
        raise ValueError("tau_w must be positive and mu_occ non-negative")
    features = np.stack([np.asarray(s.feature, dtype=np.float64) for s in samples])[:, None, :]
    dd = np.array([s.depth_diff for s in samples], dtype=np.float64)[:, None]
    vis = np.array([s.visible for s in samples], dtype=bool)[:, None]
    desc, supported = _fuse_batch(features, dd, vis, tau_w, mu_occ)
    return desc[0], bool(supported[0])


def build_descriptor_field(
    views: Sequence[tuple[CameraModel, FeatureImage, DepthImage]],
    bounds: WorkspaceBounds,
    k: int,
    tau_w: float = DEFAULT_TAU_W,
    mu_occ: float = DEFAULT_MU_OCC,
    seed: int = 0,
) -> DescriptorField:
    """Back-project all views, crop, FPS to K points, and fuse per point.

    The cloud is the union of per-view back-projections (view order, then
    row-major pixel order) cropped to ``bounds``; ``seed`` feeds
    :func:`fps_downsample`, whose seed-0 start anchors at the workspace
    center.
    """
    if not views:
        raise ValueError("need at least one view")
    dims = {feat.feature_dim for _, feat, _ in views}
    if len(dims) != 1:
        raise ValueError("views must share the feature dimension")

    clouds = [backproject(depth, cam, bounds) for cam, _, depth in views]
    union = np.concatenate(clouds, axis=0) if clouds else np.zeros((0, 3))
    if union.shape[0] == 0:
        raise ValueError("empty scene")

    sel = fps_downsample(union, k, seed, center=bounds.center)
    per_view = [_sample_view_batch(sel.points, cam, feat, depth) for cam, feat, depth in views]
    features = np.stack([f for f, _, _ in per_view])
    dd = np.stack([d for _, d, _ in per_view])
    vis = np.stack([v for _, _, v in per_view])
    desc, supported = _fuse_batch(features, dd, vis, tau_w, mu_occ)
    return DescriptorField(
        points=sel.points,
        descriptors=desc,
        support_mask=supported,
        pad_mask=sel.pad_mask,
    )
