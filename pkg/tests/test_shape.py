import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqmap.geometry import ObjectPose, SizeParams, Superquadric, iou_3d, object_to_world, surface_grid
from sqmap.geometry import radial_distance
from sqmap.shape import (FitConfig, FitError, NonFiniteCostError, compute_weights, fit_landmark,
                         fit_shape, grid_initialisation, residual_jacobian, signed_radial,
                         size_from_extent, weighted_cost, weighted_residuals)


def param_samples(sq, n, rng):
    """Surface points at uniformly drawn (eta, omega), object frame."""
    eta = rng.uniform(-math.pi / 2, math.pi / 2, n)
    om = rng.uniform(-math.pi, math.pi, n)
    s, e = sq.size, sq.shape

    def sp(c, x):
        return np.sign(c) * np.abs(c) ** x

    ce = sp(np.cos(eta), e.eps1)
    return np.column_stack([s.ax * ce * sp(np.cos(om), e.eps2), s.ay * ce * sp(np.sin(om), e.eps2),
                            s.az * sp(np.sin(eta), e.eps1)])


def test_size_from_extent_examples():
    s = size_from_extent([(-1, -2, 0), (1, 2, 4)])
    assert (s.ax, s.ay, s.az) == (1, 2, 2)
    with pytest.raises(FitError):
        size_from_extent([(0, 0, 0)])
    with pytest.raises(FitError):
        size_from_extent([(0, 0, 0), (1, 1, 0)])


def test_size_from_dense_samples():
    for e in ((0.1, 0.1), (1.0, 1.0), (0.5, 1.5), (1.9, 0.3)):
        sq = Superquadric.from_params(0.3, 0.2, 0.1, *e)
        _, _, pts = surface_grid(sq, 16, 32)
        s = size_from_extent(pts).as_array()
        assert np.all(np.abs(s - sq.size.as_array()) <= 0.02 * sq.size.as_array())


def test_compute_weights_examples():
    assert np.allclose(compute_weights([(1, 0, 0), (0, 2, 0), (0, 0, 3)]), [0, 0.5, 1])
    sphere = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0.6, 0.8, 0]])
    assert np.array_equal(compute_weights(sphere), np.ones(4))
    assert np.allclose(compute_weights([(5, 0, 0), (0, 5, 0), (10, 0, 0)]), [0, 0, 1])


def test_fit_sphere_recovers_unit_exponents(rng):
    sq = Superquadric.from_params(0.2, 0.2, 0.2)
    pts = param_samples(sq, 300, rng)
    shape, cost = fit_shape(pts, size_from_extent(pts))
    assert abs(shape.eps1 - 1.0) <= 0.05 and abs(shape.eps2 - 1.0) <= 0.05


def test_fit_cube_with_noise():
    e1s, e2s, ious = [], [], []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        sq = Superquadric.from_params(0.2, 0.15, 0.12, 0.1, 0.1)
        pts = param_samples(sq, 300, rng) + rng.normal(0, 0.01 * 0.157, (300, 3))
        fit = fit_landmark(pts, ObjectPose())
        e1s.append(fit.shape.eps1)
        e2s.append(fit.shape.eps2)
        ious.append(iou_3d(fit, sq, 50_000, seed))
    assert np.median(e1s) <= 0.3 and np.median(e2s) <= 0.3
    assert np.median(ious) >= 0.85


def test_fit_on_min_norm_sphere_is_finite():
    pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
                    [0.6, 0.8, 0], [0, 0.6, -0.8]], dtype=float)
    shape, cost = fit_shape(pts, size_from_extent(pts))
    assert 0.1 <= shape.eps1 <= 1.9 and 0.1 <= shape.eps2 <= 1.9
    assert math.isfinite(cost)


def test_fit_needs_eight_points():
    pts = np.random.default_rng(0).normal(size=(7, 3))
    with pytest.raises(FitError, match="too few points"):
        fit_shape(pts, size_from_extent(pts))
    with pytest.raises(FitError, match="too few points"):
        fit_landmark(pts, ObjectPose())


def test_non_finite_grid_raises():
    pts = np.full((10, 3), np.nan)
    with pytest.raises(NonFiniteCostError):
        grid_initialisation(pts, np.ones(10), SizeParams(1, 1, 1), 4)


def test_fit_landmark_box():
    rng = np.random.default_rng(3)
    sq = Superquadric.from_params(0.2, 0.15, 0.12, 0.1, 0.1, 0.35, (0.4, -0.3, 0.12))
    local = param_samples(sq, 300, rng) + rng.normal(0, 0.01 * 0.157, (300, 3))
    fit = fit_landmark(object_to_world(sq.pose, local), sq.pose)
    assert iou_3d(fit, sq) >= 0.75


@pytest.mark.parametrize("e", [(0.1, 0.1), (0.5, 1.0), (1.0, 1.0), (1.5, 0.4), (1.9, 1.9)])
def test_fit_landmark_noiseless_dense(e):
    sq = Superquadric.from_params(0.25, 0.15, 0.1, *e, -0.4, (1.0, 2.0, 0.1))
    _, _, local = surface_grid(sq, 24, 48)
    fit = fit_landmark(object_to_world(sq.pose, local), sq.pose)
    assert iou_3d(fit, sq) >= 0.95


def test_fit_landmark_translation_invariance(rng):
    sq = Superquadric.from_params(0.2, 0.15, 0.1, 0.3, 0.8, 0.3, (0.1, 0.2, 0.1))
    local = param_samples(sq, 200, rng) + rng.normal(0, 0.002, (200, 3))
    world = object_to_world(sq.pose, local)
    a = fit_landmark(world, sq.pose)
    shift = np.array([10.0, 0.0, 0.0])
    b = fit_landmark(world + shift, ObjectPose(sq.pose.yaw, tuple(sq.pose.t + shift)))
    assert np.allclose(a.size.as_array(), b.size.as_array(), rtol=0, atol=1e-9)
    assert abs(a.shape.eps1 - b.shape.eps1) < 1e-9 and abs(a.shape.eps2 - b.shape.eps2) < 1e-9


def test_fit_landmark_recenter_moves_pose():
    sq = Superquadric.from_params(0.2, 0.15, 0.1, 0.1, 0.1)
    _, _, local = surface_grid(sq, 16, 32)
    off = ObjectPose(0.0, (0.05, 0.0, 0.0))
    fit = fit_landmark(local, off, recenter=True)
    assert np.allclose(fit.pose.t, 0.0, atol=1e-9)
    assert fit.size.ax == pytest.approx(0.2, rel=1e-2)


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(grid_steps=1)
    with pytest.raises(ValueError):
        FitConfig(lm_lambda_init=0.0)


# -- properties ---------------------------------------------------------------

instances = st.tuples(st.floats(0.05, 0.4), st.floats(0.05, 0.4), st.floats(0.05, 0.4),
                      st.floats(0.1, 1.9), st.floats(0.1, 1.9), st.integers(0, 2**31))


@settings(max_examples=40, deadline=None)
@given(instances)
def test_lm_monotone_clamped_and_grid_dominated(inst):
    ax, ay, az, e1, e2, seed = inst
    rng = np.random.default_rng(seed)
    sq = Superquadric.from_params(ax, ay, az, e1, e2)
    pts = param_samples(sq, 120, rng) + rng.normal(0, 0.01 * np.mean([ax, ay, az]), (120, 3))
    size = size_from_extent(pts)
    trace = []
    shape, cost = fit_shape(pts, size, FitConfig(), trace)
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert 0.1 <= shape.eps1 <= 1.9 and 0.1 <= shape.eps2 <= 1.9
    _, _, c0 = grid_initialisation(pts, compute_weights(pts), size, 10)
    assert cost <= c0
    assert cost == pytest.approx(weighted_cost(pts, compute_weights(pts), size, shape.eps1, shape.eps2))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.4), st.floats(0.05, 0.4), st.floats(0.05, 0.4), st.integers(0, 2**31))
def test_ellipsoid_sanity(ax, ay, az, seed):
    rng = np.random.default_rng(seed)
    sq = Superquadric.from_params(ax, ay, az)
    pts = param_samples(sq, 100, rng)
    pts = np.vstack([pts, np.diag([ax, ay, az]), -np.diag([ax, ay, az])])
    size = size_from_extent(pts)
    w = compute_weights(pts)
    at_one = weighted_cost(pts, w, size, 1.0, 1.0)
    assert at_one < 1e-9
    _, cost = fit_shape(pts, size)
    assert cost <= at_one + 1e-20  # rounding floor of a zero-residual fit


def test_jacobian_matches_finer_differences(rng):
    """Jacobian columns agree with a Richardson-extrapolated difference."""
    for _ in range(20):
        a = rng.uniform(0.05, 0.3, 3)
        e1, e2 = rng.uniform(0.2, 1.8, 2)
        pts = rng.normal(0, 1, (40, 3)) * a
        size = SizeParams(*a)
        w = compute_weights(pts)
        J = residual_jacobian(pts, w, size, e1, e2)
        for col, d in enumerate(((1, 0), (0, 1))):
            def r(h):
                return weighted_residuals(pts, w, size, e1 + d[0] * h, e2 + d[1] * h)
            h = 1e-3
            d1 = (r(h) - r(-h)) / (2 * h)
            d2 = (r(h / 2) - r(-h / 2)) / h
            rich = (4 * d2 - d1) / 3
            g = 2 * J[:, col] @ r(0.0)
            gr = 2 * rich @ r(0.0)
            assert g == pytest.approx(gr, rel=1e-5, abs=1e-12)


def test_signed_radial_magnitude(rng):
    sq = Superquadric.from_params(0.2, 0.3, 0.1, 0.4, 1.3)
    pts = rng.normal(0, 0.3, (200, 3))
    pts[0] = 0.0
    g = signed_radial(pts, sq.size, 0.4, 1.3)
    assert np.allclose(np.abs(g), radial_distance(sq, pts), rtol=1e-12, atol=1e-15)
    f_out = np.array([np.linalg.norm(p) > 0 and g[i] > 0 for i, p in enumerate(pts)])
    from sqmap.geometry import inside_outside
    assert np.array_equal(f_out[1:], inside_outside(sq, pts[1:]) > 1.0)
