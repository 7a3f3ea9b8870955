import numpy as np
import pytest

from sqmap.geometry import Superquadric

_ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str):
    """Remember one acceptance line; printed again in the terminal summary."""
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    _ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_superquadric(rng, yaw=True, translate=True) -> Superquadric:
    a = rng.uniform(0.05, 0.5, 3)
    e = rng.uniform(0.1, 1.9, 2)
    th = rng.uniform(-np.pi, np.pi) if yaw else 0.0
    t = rng.uniform(-1.0, 1.0, 3) if translate else np.zeros(3)
    return Superquadric.from_params(*a, *e, th, tuple(t))


def ref_inside_outside(sq: Superquadric, p_obj):
    """Direct transcription of the implicit function, independent of the kernels."""
    s, e = sq.size, sq.shape
    p = np.asarray(p_obj, dtype=np.float64).reshape(-1, 3)
    x = np.abs(p[:, 0] / s.ax) ** (2.0 / e.eps2)
    y = np.abs(p[:, 1] / s.ay) ** (2.0 / e.eps2)
    z = np.abs(p[:, 2] / s.az) ** (2.0 / e.eps1)
    return (x + y) ** (e.eps2 / e.eps1) + z


def world_extent(sq: Superquadric):
    """Tight world box of the body's local bounding box under yaw."""
    ax, ay, az = sq.size.as_array()
    c, s = abs(np.cos(sq.pose.yaw)), abs(np.sin(sq.pose.yaw))
    half = np.array([c * ax + s * ay, s * ax + c * ay, az])
    return sq.pose.t - half, sq.pose.t + half


def voxel_iou(a: Superquadric, b: Superquadric, n: int = 200):
    """IoU by counting voxel centres of an n^3 grid over the union box."""
    from sqmap.geometry import world_to_object
    la, ha = world_extent(a)
    lb, hb = world_extent(b)
    lo, hi = np.minimum(la, lb), np.maximum(ha, hb)
    axes = [lo[k] + (np.arange(n) + 0.5) * (hi[k] - lo[k]) / n for k in range(3)]
    yy, zz = np.meshgrid(axes[1], axes[2], indexing="ij")
    yz = np.column_stack([yy.ravel(), zz.ravel()])
    inter = union = 0
    for x in axes[0]:
        p = np.column_stack([np.full(len(yz), x), yz])
        ia = ref_inside_outside(a, world_to_object(a.pose, p)) <= 1.0
        ib = ref_inside_outside(b, world_to_object(b.pose, p)) <= 1.0
        inter += np.count_nonzero(ia & ib)
        union += np.count_nonzero(ia | ib)
    return inter / union
