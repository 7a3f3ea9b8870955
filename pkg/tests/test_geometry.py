import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqmap.geometry import (ObjectPose, ShapeParams, SizeParams, Superquadric, contains,
                            inside_outside, iou_3d, object_to_world, parametric_point,
                            radial_distance, sample_surface, surface_mesh, world_to_object,
                            wrap_angle)

from conftest import ref_inside_outside

UNIT = Superquadric.from_params(1.0, 1.0, 1.0)

sizes = st.floats(0.05, 2.0)
exps = st.floats(0.1, 1.9)
etas = st.floats(-math.pi / 2, math.pi / 2)
omegas = st.floats(-math.pi, math.pi)


def test_parametric_point_unit_sphere():
    assert np.allclose(parametric_point(UNIT, 0.0, 0.0), [1.0, 0.0, 0.0], atol=1e-15)
    for w in (-2.0, 0.0, 1.3):
        assert np.allclose(parametric_point(UNIT, math.pi / 2, w), [0.0, 0.0, 1.0], atol=1e-15)


def test_parametric_point_matches_scalar_oracle():
    mp.mp.dps = 40

    def spow(c, e):
        return mp.sign(c) * abs(c) ** e

    eta, omega = mp.pi / 4, mp.pi / 2
    want = [1 * spow(mp.cos(eta), 0.5) * spow(mp.cos(omega), 1),
            2 * spow(mp.cos(eta), 0.5) * spow(mp.sin(omega), 1),
            3 * spow(mp.sin(eta), 0.5)]
    sq = Superquadric.from_params(1, 2, 3, 0.5, 1.0)
    got = parametric_point(sq, math.pi / 4, math.pi / 2)
    assert np.allclose(got, [float(v) for v in want], rtol=0, atol=1e-12)


def test_inside_outside_examples():
    assert inside_outside(UNIT, (0.5, 0.5, 0.5)) == pytest.approx(0.75, abs=1e-15)
    assert inside_outside(UNIT, (2.0, 0.0, 0.0)) == pytest.approx(4.0, abs=1e-15)


def test_radial_distance_examples():
    assert radial_distance(UNIT, (2.0, 0.0, 0.0)) == pytest.approx(1.0, abs=1e-15)
    assert radial_distance(UNIT, (0.5, 0.0, 0.0)) == pytest.approx(0.5, abs=1e-15)


def test_radial_distance_at_origin_is_min_axis():
    sq = Superquadric.from_params(0.3, 0.2, 0.4, 0.5, 1.2)
    assert radial_distance(sq, (0.0, 0.0, 0.0)) == pytest.approx(0.2)


def test_sample_surface_examples():
    pts = sample_surface(UNIT, 2, 3)
    assert len(pts) == 6
    assert np.allclose([np.linalg.norm(p.position) for p in pts], 1.0)
    sq = Superquadric.from_params(0.2, 0.3, 0.1, 0.3, 1.6)
    pts = sample_surface(sq, 16, 32)
    assert len(pts) == 512
    f = inside_outside(sq, np.array([p.position for p in pts]))
    assert np.allclose(f, 1.0, atol=1e-9)
    with pytest.raises(ValueError):
        sample_surface(UNIT, 1, 8)


def test_surface_mesh_shapes():
    v, f = surface_mesh(UNIT, 4, 6)
    assert v.shape == (24, 3)
    assert f.shape == (2 * 3 * 6, 3)
    assert f.min() == 0 and f.max() == 23


def test_iou_examples():
    a = Superquadric.from_params(0.3, 0.2, 0.1, 0.5, 0.5, 0.3, (0.1, 0.2, 0.3))
    assert iou_3d(a, a, 20_000) == pytest.approx(1.0, abs=0.01)
    b = Superquadric.from_params(1, 1, 1, t=(0, 0, 0))
    c = Superquadric.from_params(1, 1, 1, t=(100, 0, 0))
    assert iou_3d(b, c) == 0.0
    cube = Superquadric.from_params(0.5, 0.5, 0.5, 0.1, 0.1)
    shifted = Superquadric.from_params(0.5, 0.5, 0.5, 0.1, 0.1, t=(0.5, 0, 0))
    assert iou_3d(cube, shifted, 200_000) == pytest.approx(1 / 3, abs=0.02)


def test_iou_deterministic_and_rejects_few_samples():
    a = Superquadric.from_params(0.3, 0.2, 0.1, 0.5, 0.5)
    b = Superquadric.from_params(0.2, 0.2, 0.2, 1.0, 1.0, t=(0.1, 0, 0))
    assert iou_3d(a, b, seed=7) == iou_3d(a, b, seed=7)
    with pytest.raises(ValueError):
        iou_3d(a, b, n_samples=100)


def test_world_to_object_examples():
    p = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(world_to_object(ObjectPose(), p), p)
    q = world_to_object(ObjectPose(math.pi / 2), (1.0, 0.0, 0.0))
    assert np.allclose(q, [0.0, -1.0, 0.0], atol=1e-15)


def test_parameter_types_validate():
    assert ShapeParams(0.01, 5.0) == ShapeParams(0.1, 1.9)
    with pytest.raises(ValueError):
        SizeParams(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        ShapeParams(float("nan"), 1.0)
    assert ObjectPose(3 * math.pi).yaw == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_dict_round_trip():
    sq = Superquadric.from_params(0.3, 0.2, 0.1, 0.4, 1.5, 0.7, (1, 2, 3))
    assert Superquadric.from_dict(sq.to_dict()) == sq
    assert len(sq.params) == 11


# -- properties ---------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(sizes, sizes, sizes, exps, exps, etas, omegas)
def test_surface_identity(ax, ay, az, e1, e2, eta, omega):
    sq = Superquadric.from_params(ax, ay, az, e1, e2)
    p = parametric_point(sq, eta, omega)
    assert inside_outside(sq, p) == pytest.approx(1.0, abs=1e-9)
    assert radial_distance(sq, p) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(sizes, sizes, sizes, exps, exps, st.floats(0.2, 3.0))
def test_radial_distance_positive_off_surface(ax, ay, az, e1, e2, scale):
    sq = Superquadric.from_params(ax, ay, az, e1, e2)
    p = parametric_point(sq, 0.4, 1.1) * scale
    g = radial_distance(sq, p)
    if abs(scale - 1.0) > 1e-6:
        assert g > 0.0
    assert g == pytest.approx(abs(scale - 1.0) * np.linalg.norm(p) / scale, rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(sizes, sizes, sizes, exps, exps,
       st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2)))
def test_sign_symmetry(ax, ay, az, e1, e2, p):
    sq = Superquadric.from_params(ax, ay, az, e1, e2)
    p = np.array(p)
    f = inside_outside(sq, p)
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    assert np.allclose(inside_outside(sq, signs * p), f, rtol=1e-12)
    assert f == pytest.approx(ref_inside_outside(sq, p)[0], rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-4, 4), st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)),
       st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)))
def test_world_object_round_trip(yaw, t, p):
    pose = ObjectPose(yaw, t)
    back = world_to_object(pose, object_to_world(pose, np.array(p)))
    assert np.allclose(back, p, rtol=0, atol=1e-12)


def test_ellipsoid_reduction(rng):
    for _ in range(20):
        a = rng.uniform(0.1, 2.0, 3)
        sq = Superquadric.from_params(*a)
        p = rng.normal(0, 1, (50, 3))
        quad = ((p / a) ** 2).sum(axis=1)
        assert np.allclose(inside_outside(sq, p), quad, rtol=1e-12, atol=0)


def test_contains_matches_reference(rng):
    sq = Superquadric.from_params(0.3, 0.2, 0.25, 0.4, 1.3, 0.5, (0.1, -0.2, 0.3))
    p = rng.uniform(-0.6, 0.8, (5000, 3))
    want = ref_inside_outside(sq, world_to_object(sq.pose, p)) <= 1.0
    assert np.array_equal(contains(sq, p), want)


def test_iou_symmetric_and_rigid_invariant():
    a = Superquadric.from_params(0.3, 0.2, 0.15, 0.3, 0.8, 0.4, (0.0, 0.0, 0.0))
    b = Superquadric.from_params(0.25, 0.25, 0.1, 1.0, 0.2, -0.2, (0.1, 0.05, 0.02))
    ab, ba = iou_3d(a, b, 200_000, 1), iou_3d(b, a, 200_000, 2)
    assert abs(ab - ba) < 0.01
    shift = np.array([3.0, -1.0, 0.5])
    yaw = 0.9
    R = ObjectPose(yaw).rotation

    def moved(sq):
        t = R @ sq.pose.t + shift
        return Superquadric(sq.size, sq.shape, ObjectPose(sq.pose.yaw + yaw, tuple(t)))

    assert abs(iou_3d(moved(a), moved(b), 200_000, 1) - ab) < 0.01
    assert 0.0 <= ab <= 1.0
