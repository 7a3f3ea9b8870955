"""Compiled kernels against the pure-Python fallback."""
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from sqmap import _kernels_py as py
from sqmap import kernels

try:
    from sqmap import _kernels as cy
except ImportError:  # extension not built
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled extension not built")

SHAPES = [(0.2, 0.15, 0.1, 0.1, 0.1), (0.3, 0.2, 0.25, 1.0, 1.0), (0.1, 0.3, 0.2, 1.9, 0.4),
          (0.25, 0.25, 0.05, 0.5, 1.7)]


@pytest.fixture
def pts(rng):
    p = rng.normal(0, 0.2, (500, 3))
    p[0] = 0.0
    p[1] = (0.0, 0.0, 1e-300)
    return p


@needs_ext
@pytest.mark.parametrize("args", SHAPES)
def test_pointwise_kernels_agree(pts, args):
    for name in ("inside_outside", "radial_scale", "radial_distance"):
        a = getattr(cy, name)(pts, *args)
        b = getattr(py, name)(pts, *args)
        assert np.allclose(a, b, rtol=1e-13, atol=1e-300), name
    assert np.array_equal(cy.count_inside(pts, *args).astype(bool), py.count_inside(pts, *args))


@needs_ext
def test_grid_costs_agree(pts, rng):
    w = rng.random(len(pts))
    axis = np.linspace(0.1, 1.9, 6)
    e1s, e2s = (g.ravel().copy() for g in np.meshgrid(axis, axis, indexing="ij"))
    a = cy.grid_costs(pts, w, 0.2, 0.1, 0.15, e1s, e2s)
    b = py.grid_costs(pts, w, 0.2, 0.1, 0.15, e1s, e2s)
    assert np.allclose(a, b, rtol=1e-12)


@needs_ext
def test_c_factor_agrees():
    for n in range(0, 600):
        assert cy.c_factor(n) == pytest.approx(py.c_factor(n), abs=1e-12)


def _draws(rng, n, n_trees, psi):
    keys = rng.random((n_trees, n))
    sub = np.ascontiguousarray(np.argsort(keys, axis=1)[:, :psi], dtype=np.int64)
    normals = rng.standard_normal((n_trees, psi - 1, 3))
    uniforms = rng.random((n_trees, psi - 1))
    return sub, normals, uniforms


@needs_ext
@pytest.mark.parametrize("n,psi", [(2, 2), (40, 40), (300, 256), (700, 128)])
def test_forest_kernels_agree(rng, n, psi):
    X = rng.normal(size=(n, 3))
    X[:5] = X[0]  # repeated points exercise the identical-points branch
    sub, normals, uniforms = _draws(rng, n, 12, psi)
    depth = max(1, math.ceil(math.log2(psi)))
    fa = cy.build_forest(X, sub, normals, uniforms, depth)
    fb = py.build_forest(X, sub, normals, uniforms, depth)
    for a, b in zip(fa, fb):
        assert np.array_equal(a, b)
    Q = np.vstack([X, rng.normal(size=(50, 3)) * 3])
    assert np.allclose(cy.mean_path_length(Q, *fa), py.mean_path_length(Q, *fb), rtol=1e-13)


@needs_ext
@pytest.mark.parametrize("n", [2, 7, 64, 256])
def test_self_path_length_agrees(rng, n):
    X = rng.normal(size=(n, 3))
    X[-2:] = X[0]
    normals = rng.standard_normal((9, n - 1, 3))
    uniforms = rng.random((9, n - 1))
    depth = max(1, math.ceil(math.log2(n)))
    a = cy.self_path_length(X, normals, uniforms, depth)
    b = py.self_path_length(X, normals, uniforms, depth)
    assert np.allclose(a, b, rtol=1e-13)
    # fused kernel equals build + traversal
    sub = np.tile(np.arange(n, dtype=np.int64), (9, 1))
    forest = cy.build_forest(X, sub, normals, uniforms, depth)
    assert np.allclose(a, cy.mean_path_length(X, *forest), rtol=1e-13)


def test_selection_reports_implementation():
    assert kernels.IMPLEMENTATION in ("cython", "python")
    if kernels.compiled_available() and os.environ.get("SQMAP_PURE_PYTHON", "") in ("", "0"):
        assert kernels.IMPLEMENTATION == "cython"


def test_env_var_forces_fallback():
    env = dict(os.environ, SQMAP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from sqmap import kernels; print(kernels.IMPLEMENTATION)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.slow
def test_fallback_pipeline_matches_compiled():
    """A short scenario gives the same map with either implementation."""
    code = ("from sqmap.simulator import benchmark_scene, run_scenario, TrajectorySpec, NoiseSpec\n"
            "from sqmap.io import dumps, map_to_json\n"
            "r = run_scenario(benchmark_scene(0), TrajectorySpec(n_frames=25), NoiseSpec(), eval_samples=20000)\n"
            "print(dumps(map_to_json(r.map)))\n")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, SQMAP_PURE_PYTHON=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                   text=True, check=True).stdout)
    if cy is None:
        pytest.skip("compiled extension not built")
    a, b = (json.loads(o) for o in outs)
    assert len(a["landmarks"]) == len(b["landmarks"])
    for la, lb in zip(a["landmarks"], b["landmarks"]):
        assert la["n_points"] == lb["n_points"]
        for k in ("ax", "ay", "az", "eps1", "eps2", "yaw"):
            assert la[k] == pytest.approx(lb[k], rel=1e-6, abs=1e-9)
