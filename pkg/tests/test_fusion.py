"""Per-view sampling and fusion tests.

Weighting contract: a view is valid when visible and dr >= -mu_occ, and
valid views blend with weights exp(-|dr|/tau_w) normalized to sum 1. The
whole pipeline is cross-checked against the brute-force oracle in
fusion_oracle.py on random synthetic scenes.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from semfield.fusion import (
    ViewSample,
    build_descriptor_field,
    fuse,
    sample_view,
)
from semfield.geometry import (
    CameraModel,
    DepthImage,
    FeatureImage,
    WorkspaceBounds,
    project,
)

from scene_compare import compare_field_to_oracle


def down_camera(height=0.5, fx=10.0, size=9):
    """Camera at (0, 0, height) looking straight down the world -z axis."""
    rot = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    center = np.array([0.0, 0.0, height])
    return CameraModel(
        fx=fx,
        fy=fx,
        cx=(size - 1) / 2.0,
        cy=(size - 1) / 2.0,
        rotation=rot,
        translation=-rot @ center,
        width=size,
        height=size,
    )


def plane_scene(plane_z=0.1, cam_height=0.5, size=9, feature=None):
    """Constant-depth view of the plane z = plane_z with a constant feature."""
    cam = down_camera(height=cam_height, size=size)
    depth_val = cam_height - plane_z
    depth = DepthImage(
        np.full((size, size), depth_val, dtype=np.float32),
        np.ones((size, size), dtype=bool),
    )
    f = np.array([1.0, -2.0, 0.5] if feature is None else feature, dtype=np.float32)
    feat = FeatureImage(np.broadcast_to(f, (size, size, len(f))).copy())
    return cam, feat, depth


class TestSampleView:
    def test_on_surface_zero_depth_diff(self):
        """Points on the rendered plane read dr = 0 within 1e-4."""
        cam, feat, depth = plane_scene()
        s = sample_view(np.array([0.0, 0.0, 0.1]), cam, feat, depth)
        assert s.visible
        assert abs(s.depth_diff) < 1e-4
        np.testing.assert_allclose(s.feature, [1.0, -2.0, 0.5], atol=1e-6)

    def test_behind_surface_along_axis(self):
        """0.05 m past the surface along the central ray: dr = -0.05.

        On the optical axis the ray direction is the camera z axis, so the
        z-depth grows by exactly the traveled distance.
        """
        cam, feat, depth = plane_scene()
        s = sample_view(np.array([0.0, 0.0, 0.05]), cam, feat, depth)
        assert s.visible
        assert s.depth_diff == pytest.approx(-0.05, abs=1e-4)

    def test_in_front_of_surface_positive(self):
        cam, feat, depth = plane_scene()
        s = sample_view(np.array([0.0, 0.0, 0.15]), cam, feat, depth)
        assert s.depth_diff == pytest.approx(0.05, abs=1e-4)

    def test_outside_frustum_invisible(self):
        cam, feat, depth = plane_scene()
        s = sample_view(np.array([5.0, 0.0, 0.1]), cam, feat, depth)
        assert not s.visible

    def test_invalid_depth_invisible(self):
        cam, feat, depth = plane_scene()
        holes = DepthImage(depth.values, np.zeros_like(depth.validity))
        s = sample_view(np.array([0.0, 0.0, 0.1]), cam, feat, holes)
        assert not s.visible


def vs(feature, depth_diff, visible=True):
    return ViewSample(
        feature=np.asarray(feature, dtype=np.float64),
        depth_diff=depth_diff,
        visible=visible,
    )


class TestFuse:
    def test_single_view_identity(self):
        f, ok = fuse([vs([3.0, -1.0], 0.0)], tau_w=0.02, mu_occ=0.01)
        assert ok
        np.testing.assert_allclose(f, [3.0, -1.0])

    def test_symmetric_views_average(self):
        """Equal |dr| gives equal weights, so the blend is the plain mean."""
        f, ok = fuse(
            [vs([1.0, 0.0], 0.004), vs([0.0, 1.0], -0.004)], tau_w=0.02, mu_occ=0.01
        )
        assert ok
        np.testing.assert_allclose(f, [0.5, 0.5])

    def test_closed_form_weights(self):
        """dr = 0 and dr = tau_w with features a, b: (a + b*e^-1)/(1 + e^-1)."""
        a = np.array([2.0, 0.0, 1.0])
        b = np.array([0.0, 4.0, -1.0])
        tau = 0.02
        f, ok = fuse([vs(a, 0.0), vs(b, tau)], tau_w=tau, mu_occ=0.01)
        assert ok
        e1 = math.exp(-1.0)
        np.testing.assert_allclose(f, (a + b * e1) / (1.0 + e1), atol=1e-12)

    def test_occluded_view_dropped(self):
        f, ok = fuse(
            [vs([1.0], 0.0), vs([5.0], -0.05)], tau_w=0.02, mu_occ=0.01
        )
        assert ok
        np.testing.assert_allclose(f, [1.0])

    def test_occlusion_boundary_inclusive(self):
        """dr exactly at -mu_occ still counts as valid."""
        f, ok = fuse([vs([4.0], -0.01)], tau_w=0.02, mu_occ=0.01)
        assert ok
        np.testing.assert_allclose(f, [4.0])

    def test_no_valid_views_unsupported(self):
        f, ok = fuse([vs([1.0], 0.0, visible=False), vs([2.0], -9.9)], 0.02, 0.01)
        assert not ok
        np.testing.assert_array_equal(f, [0.0])

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            samples = [
                vs(rng.normal(size=4), rng.uniform(-0.009, 0.05)) for _ in range(4)
            ]
            f, ok = fuse(samples, 0.02, 0.01)
            assert ok
            stack = np.stack([s.feature for s in samples])
            assert np.all(f >= stack.min(axis=0) - 1e-12)
            assert np.all(f <= stack.max(axis=0) + 1e-12)

    def test_view_order_permutation_invariant(self):
        rng = np.random.default_rng(8)
        samples = [vs(rng.normal(size=3), rng.uniform(-0.005, 0.03)) for _ in range(5)]
        f1, _ = fuse(samples, 0.02, 0.01)
        f2, _ = fuse(samples[::-1], 0.02, 0.01)
        np.testing.assert_allclose(f1, f2, atol=1e-12)

    def test_feature_scaling_linearity(self):
        rng = np.random.default_rng(9)
        samples = [vs(rng.normal(size=3), rng.uniform(0, 0.03)) for _ in range(3)]
        scaled = [vs(2.5 * s.feature, s.depth_diff) for s in samples]
        f1, _ = fuse(samples, 0.02, 0.01)
        f2, _ = fuse(scaled, 0.02, 0.01)
        np.testing.assert_allclose(f2, 2.5 * f1, atol=1e-12)

    def test_weight_monotone_in_depth_diff(self):
        """Pushing one view's |dr| up never raises its weight share.

        Basis features make the fused vector read the normalized weights
        directly.
        """
        prev = 1.0
        for dr in np.linspace(0.0, 0.05, 11):
            f, _ = fuse([vs([1.0, 0.0], 0.0), vs([0.0, 1.0], dr)], 0.02, 0.01)
            assert f[1] <= prev + 1e-12
            prev = f[1]


ORACLE_BOUNDS = WorkspaceBounds(
    np.array([-0.2, -0.2, -0.05]), np.array([0.2, 0.2, 0.2])
)


def _corners(bounds: WorkspaceBounds) -> np.ndarray:
    lo, hi = bounds.lo, bounds.hi
    return np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
    )


def random_scene(rng, n_views=3, size=10, f_dim=5, bounds=ORACLE_BOUNDS):
    """Random ring cameras whose frustums strictly contain ``bounds``.

    Keeping the crop region interior to every frustum (margin 1 px) and the
    depth fully valid means no cloud point sits on a frustum edge or a
    validity boundary, so the brute-force comparison has no one-ulp razor
    cases. The invalid-depth and out-of-frustum codepaths have their own
    dedicated tests.
    """
    views = []
    while len(views) < n_views:
        ang = rng.uniform(0, 2 * math.pi)
        dist = rng.uniform(0.45, 0.7)
        height = rng.uniform(0.35, 0.6)
        pos = np.array([dist * math.cos(ang), dist * math.sin(ang), height])
        fwd = -pos / np.linalg.norm(pos)
        up_hint = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, up_hint)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        cam = CameraModel(
            fx=float(rng.uniform(6, 9)),
            fy=float(rng.uniform(6, 9)),
            cx=(size - 1) / 2.0,
            cy=(size - 1) / 2.0,
            rotation=rot,
            translation=-rot @ pos,
            width=size,
            height=size,
        )
        u, r, _ = project(_corners(bounds), cam)
        # Frustums are convex, so corner margins bound the whole box.
        if np.all(r > 0.05) and np.all(u >= 1.0) and np.all(u <= size - 2.0):
            depth = DepthImage(
                rng.uniform(0.2, 1.2, size=(size, size)).astype(np.float32),
                np.ones((size, size), dtype=bool),
            )
            feat = FeatureImage(rng.normal(size=(size, size, f_dim)).astype(np.float32))
            views.append((cam, feat, depth))
    return views


class TestBuildDescriptorField:
    def test_single_view_degenerate_fusion(self):
        """One view: every supported descriptor is that view's bilinear read."""
        cam, feat, depth = plane_scene(size=7)
        bounds = WorkspaceBounds(np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))
        field = build_descriptor_field([(cam, feat, depth)], bounds, k=20, seed=0)
        assert field.support_mask.all()
        np.testing.assert_allclose(
            field.descriptors, np.tile([1.0, -2.0, 0.5], (20, 1)), atol=1e-6
        )

    def test_empty_scene_error(self):
        cam, feat, depth = plane_scene()
        bounds = WorkspaceBounds(np.array([5.0, 5.0, 5.0]), np.array([6.0, 6.0, 6.0]))
        with pytest.raises(ValueError, match="empty scene"):
            build_descriptor_field([(cam, feat, depth)], bounds, k=8)

    def test_matches_brute_force_oracle(self):
        """Vectorized pipeline equals the independent per-point loop away
        from one-ulp decision boundaries (see scene_compare)."""
        total = 0
        for scene_seed in range(5):
            rng = np.random.default_rng(100 + scene_seed)
            views = random_scene(rng)
            field = build_descriptor_field(views, ORACLE_BOUNDS, k=32, seed=scene_seed)
            compared, _ = compare_field_to_oracle(field, views, 0.02, 0.01)
            total += compared
        assert total >= 5 * 32 * 0.95

    def test_unsupported_rows_zero(self):
        rng = np.random.default_rng(77)
        views = random_scene(rng, n_views=1)
        # Punch out most of the depth validity so some FPS points lose support.
        cam, feat, depth = views[0]
        mask = depth.validity.copy()
        mask[:, :5] = False
        views = [(cam, feat, DepthImage(depth.values, mask))]
        bounds = WorkspaceBounds(np.array([-2.0, -2.0, -2.0]), np.array([2.0, 2.0, 2.0]))
        field = build_descriptor_field(views, bounds, k=40, seed=1)
        assert np.all(field.descriptors[~field.support_mask] == 0.0)
