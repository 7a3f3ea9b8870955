import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqmap.camera import (BBox, CameraFrame, Intrinsics, Segment2D, bbox_contains, look_at,
                          project_point, project_points, project_segment)
from sqmap.geometry import ObjectPose, object_to_world
from sqmap.pose import axis_segments

K500 = Intrinsics(fx=500, fy=500, cx=250, cy=250, width=500, height=500)


def identity_frame(intr=K500):
    return CameraFrame(0, np.eye(3), np.zeros(3), intr)


def test_project_point_examples():
    f = identity_frame()
    assert np.allclose(project_point(f, (0, 0, 1)), [250, 250])
    assert np.allclose(project_point(f, (0.1, 0, 1)), [300, 250])
    assert project_point(f, (0, 0, -1)) is None
    assert project_point(f, (0, 0, 1e-7)) is None


def test_project_segment_examples():
    f = identity_frame()
    s = project_segment(f, (0, 0, 2), (1, 0, 2))
    assert s is not None and s.slope == pytest.approx(0.0)
    assert project_segment(f, (0, 0, 2), (0, 0, -1)) is None
    assert project_segment(f, (0, 0, 2), (0.001, 0, 2)) is None  # under 2 px
    # along the optical axis but offset sideways
    a, b = (0.3, 0.2, 1.0), (0.3, 0.2, 3.0)
    s = project_segment(f, a, b)
    pa, pb = project_point(f, a), project_point(f, b)
    assert s.slope == pytest.approx((pb[1] - pa[1]) / (pb[0] - pa[0]))
    assert np.array_equal(s.p, tuple(pa)) and np.array_equal(s.q, tuple(pb))


def test_bbox_contains_inclusive():
    b = BBox(10, 20, 30, 40)
    assert bbox_contains(b, (20, 30))
    assert bbox_contains(b, (10, 20)) and bbox_contains(b, (30, 40))
    assert not bbox_contains(b, (31, 30))


def test_bbox_clip_and_validation():
    intr = Intrinsics(width=100, height=80, cx=50, cy=40)
    assert BBox(-5, -5, 50, 50).clipped(intr).to_list() == [0, 0, 50, 50]
    assert BBox(200, 0, 300, 10).clipped(intr) is None
    with pytest.raises(ValueError):
        BBox(1, 1, 1, 2)


def test_intrinsics_and_frame_validation():
    with pytest.raises(ValueError):
        Intrinsics(fx=-1)
    with pytest.raises(ValueError):
        Intrinsics(cx=700)
    with pytest.raises(ValueError):
        CameraFrame(0, np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_segment_angle_is_undirected():
    a = Segment2D((0, 0), (1, 1))
    b = Segment2D((1, 1), (0, 0))
    assert a.angle == pytest.approx(b.angle) == pytest.approx(math.pi / 4)
    assert Segment2D((0, 0), (0, 3)).vertical
    with pytest.raises(ValueError):
        Segment2D((1, 1), (1, 1))


def test_look_at_centres_target():
    eye = np.array([2.0, -1.0, 1.5])
    target = np.array([0.1, 0.2, 0.05])
    f = CameraFrame(0, look_at(eye, target), eye)
    uv = project_point(f, target)
    assert np.allclose(uv, [f.intrinsics.cx, f.intrinsics.cy], atol=1e-9)


def test_project_points_matches_pinhole(rng):
    f = CameraFrame(3, look_at((1.0, 2.0, 1.0), (0, 0, 0)), (1.0, 2.0, 1.0))
    p = rng.normal(0, 0.3, (100, 3))
    uv, ok = project_points(f, p)
    pc = (p - f.translation) @ f.rotation
    want = (f.intrinsics.K @ pc.T).T
    want = want[:, :2] / want[:, 2:3]
    assert ok.all()
    assert np.allclose(uv, want, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_axis_projection_associativity(yaw, tx, ty):
    """Projecting an object-frame axis through the composed pose equals
    projecting the pre-transformed world segment."""
    eye = np.array([1.5, -1.2, 1.0])
    f = CameraFrame(0, look_at(eye, (0, 0, 0)), eye)
    pose = ObjectPose(yaw, (tx, ty, 0.1))
    segs = axis_segments(yaw, pose.t)
    local = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    world = object_to_world(pose, local)
    for k in range(3):
        a = project_point(f, segs[k, 0])
        b = project_point(f, segs[k, 1])
        assert np.allclose(a, project_point(f, world[0]), atol=1e-9)
        assert np.allclose(b, project_point(f, world[k + 1]), atol=1e-9)
