"""Pinhole camera math and fixed-size point-cloud extraction.

Conventions used throughout the package:

- Camera frame: x right, y down, z forward; a point is in front of the
  camera when its camera-frame z is positive.
- Pixel coordinates are continuous, with texel centers at integer
  coordinates; ``u = (column, row)``.
- Depth values are z-depths (camera-frame z of the surface point), not
  Euclidean ray lengths, so depth images and projected point depths
  compare like with like.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CameraModel",
    "DepthImage",
    "FeatureImage",
    "WorkspaceBounds",
    "FpsResult",
    "project",
    "bilinear_sample",
    "backproject",
    "fps_downsample",
]

_ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class CameraModel:
    """Calibrated pinhole camera with a rigid world-to-camera transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3), world-to-camera
    translation: np.ndarray  # (3,), world-to-camera
    width: int
    height: int

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be (3, 3) and translation (3,)")
        if np.max(np.abs(r.T @ r - np.eye(3))) >= _ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(r) <= 0.0:
            raise ValueError("rotation determinant must be +1")
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")
        if not (0.0 < self.cx < self.width and 0.0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def world_to_cam(self, p: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into the camera frame."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True)
class DepthImage:
    """H x W z-depth grid with a per-pixel validity mask."""

    values: np.ndarray  # (H, W) float32, meters
    validity: np.ndarray  # (H, W) bool

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float32)
        m = np.asarray(self.validity, dtype=bool)
        if v.ndim != 2 or m.shape != v.shape:
            raise ValueError("depth values must be (H, W) with matching mask")
        if m.any():
            valid = v[m]
            if not np.all(np.isfinite(valid)) or np.any(valid <= 0.0):
                raise ValueError("valid depths must be positive and finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "validity", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class FeatureImage:
    """H x W x F grid of unitless descriptor components."""

    values: np.ndarray  # (H, W, F) float32

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or v.shape[2] < 1:
            raise ValueError("feature values must be (H, W, F) with F >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def feature_dim(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class WorkspaceBounds:
    """Axis-aligned crop region in world coordinates."""

    lo: np.ndarray  # (3,), meters
    hi: np.ndarray  # (3,), meters

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("bounds corners must be 3-vectors")
        if not np.all(lo < hi):
            raise ValueError("bounds min must be < max componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Inclusive membership test for points of shape (..., 3)."""
        p = np.asarray(points, dtype=np.float64)
        return np.all((p >= self.lo) & (p <= self.hi), axis=-1)


def project(p: np.ndarray, cam: CameraModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project world points into a camera.

    Parameters
    ----------
    p : ndarray
        World points, shape (3,) or (..., 3). Must be finite.
    cam : CameraModel

    Returns
    -------
    (u, r, in_frustum)
        ``u`` continuous pixel coordinates (..., 2); ``r`` z-depth (...,);
        ``in_frustum`` false where the point is behind the camera or
        projects outside [0, W-1] x [0, H-1]. ``u`` and ``r`` are still
        populated for out-of-frustum points (flag, not an error), except
        that a non-positive z yields the raw ratio without meaning.
    """
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("points must be finite")
    pc = cam.world_to_cam(p)
    z = pc[..., 2]
    # Guard the divide; behind-camera points are flagged, not used.
    z_safe = np.where(z > 0.0, z, 1.0)
    u = np.stack(
        [
            cam.fx * pc[..., 0] / z_safe + cam.cx,
            cam.fy * pc[..., 1] / z_safe + cam.cy,
        ],
        axis=-1,
    )
    in_frustum = (
        (z > 0.0)
        & (u[..., 0] >= 0.0)
        & (u[..., 0] <= cam.width - 1.0)
        & (u[..., 1] >= 0.0)
        & (u[..., 1] <= cam.height - 1.0)
    )
    return u, z, in_frustum


def _bilinear_weights(
    u: np.ndarray, width: int, height: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Shared corner-index/weight computation for in-bounds u of shape (N, 2)."""
    x = u[:, 0]
    y = u[:, 1]
    # Clamp the base corner so u == W-1 resolves to the last texel pair
    # with fractional weight 1 (exact at the edge center).
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(width - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = x - x0
    wy = y - y0
    return x0, y0, x1, y1, np.stack([(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy], axis=0)


def bilinear_sample(
    img: DepthImage | FeatureImage, u: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly interpolate an image at continuous pixel coordinates.

    Parameters
    ----------
    img : DepthImage or FeatureImage
    u : ndarray
        Pixel coordinates, shape (2,) or (..., 2), texel centers at
        integers.

    Returns
    -------
    (values, valid)
        Scalars (...,) for depth, vectors (..., F) for features.
        ``valid`` is false for out-of-bounds coordinates and, for depth
        images, whenever any of the 4 contributing texels is invalid
        (no depths are invented at silhouette edges).
    """
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim == 1
    uu = np.atleast_2d(u)
    if uu.shape[-1] != 2:
        raise ValueError("pixel coordinates must have a trailing dimension of 2")
    lead = uu.shape[:-1]
    flat = uu.reshape(-1, 2)

    if isinstance(img, DepthImage):
        h, w = img.shape
        grid = img.values.astype(np.float64)
        out_shape = lead
    else:
        h, w = img.values.shape[:2]
        grid = img.values.astype(np.float64)
        out_shape = lead + (img.feature_dim,)

    in_bounds = (
        (flat[:, 0] >= 0.0)
        & (flat[:, 0] <= w - 1.0)
        & (flat[:, 1] >= 0.0)
        & (flat[:, 1] <= h - 1.0)
    )
    safe = np.where(in_bounds[:, None], flat, 0.0)
    x0, y0, x1, y1, wts = _bilinear_weights(safe, w, h)

    corners = (grid[y0, x0], grid[y1, x0], grid[y0, x1], grid[y1, x1])
    if isinstance(img, DepthImage):
        vals = (
            wts[0] * corners[0]
            + wts[1] * corners[2]
            + wts[2] * corners[1]
            + wts[3] * corners[3]
        )
        m = img.validity
        # Only texels with non-zero blend weight contribute; an exact
        # texel-center sample is unaffected by invalid neighbors.
        corner_valid = np.stack([m[y0, x0], m[y0, x1], m[y1, x0], m[y1, x1]], axis=0)
        all_valid = np.all(corner_valid | (wts == 0.0), axis=0)
        valid = in_bounds & all_valid
        vals = np.where(valid, vals, 0.0)
    else:
        w4 = wts[:, :, None]
        vals = (
            w4[0] * corners[0]
            + w4[1] * corners[2]
            + w4[2] * corners[1]
            + w4[3] * corners[3]
        )
        valid = in_bounds
        vals = np.where(valid[:, None], vals, 0.0)

    vals = vals.reshape(out_shape)
    valid = valid.reshape(lead)
    if single:
        return vals[0], valid[0]
    return vals, valid


def backproject(
    depth: DepthImage, cam: CameraModel, bounds: WorkspaceBounds
) -> np.ndarray:
    """Lift every valid pixel to a world point, cropped to bounds.

    Returns an (N, 3) array in row-major pixel order; N may be 0.
    """
    h, w = depth.shape
    if (h, w) != (cam.height, cam.width):
        raise ValueError("depth image size does not match camera")
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    m = depth.validity
    z = depth.values[m].astype(np.float64)
    x = (cols[m] - cam.cx) / cam.fx * z
    y = (rows[m] - cam.cy) / cam.fy * z
    pc = np.stack([x, y, z], axis=-1)
    pw = (pc - cam.translation) @ cam.rotation
    return pw[bounds.contains(pw)]


@dataclass(frozen=True)
class FpsResult:
    """Exactly K points selected by farthest-point sampling."""

    points: np.ndarray  # (K, 3) float64
    indices: np.ndarray  # (K,) int64 indices into the input cloud
    pad_mask: np.ndarray = field(default=None)  # (K,) bool, True on repeated padding

    def __post_init__(self) -> None:
        if self.pad_mask is None:
            object.__setattr__(self, "pad_mask", np.zeros(len(self.indices), dtype=bool))


def fps_downsample(
    points: np.ndarray, k: int, seed: int, center: np.ndarray | None = None
) -> FpsResult:
    """Greedy farthest-point subsampling to exactly ``k`` points.

    The start index is deterministic: with ``seed == 0`` it is the point
    nearest ``center`` (the midpoint of the cloud's bounding box when no
    center is given; callers that know the workspace pass its center),
    otherwise ``seed %% len(points)``. All argmax/argmin ties break to the
    lowest index. If the cloud holds fewer than ``k`` points, the output
    is padded by repeating the last selected point, flagged in
    ``pad_mask``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be (N, 3)")
    n = pts.shape[0]
    if n == 0:
        raise ValueError("empty cloud")
    if k < 1:
        raise ValueError("k must be >= 1")

    if seed == 0:
        if center is None:
            c = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
        else:
            c = np.asarray(center, dtype=np.float64)
        start = int(np.argmin(np.sum((pts - c) ** 2, axis=1)))
    else:
        start = int(seed % n)

    n_select = min(k, n)
    chosen = np.empty(n_select, dtype=np.int64)
    chosen[0] = start
    min_d2 = np.sum((pts - pts[start]) ** 2, axis=1)
    for i in range(1, n_select):
        nxt = int(np.argmax(min_d2))
        chosen[i] = nxt
        d2 = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)

    if n_select < k:
        pad = np.full(k - n_select, chosen[-1], dtype=np.int64)
        idx = np.concatenate([chosen, pad])
        pad_mask = np.zeros(k, dtype=bool)
        pad_mask[n_select:] = True
    else:
        idx = chosen
        pad_mask = np.zeros(k, dtype=bool)
    return FpsResult(points=pts[idx].copy(), indices=idx, pad_mask=pad_mask)
