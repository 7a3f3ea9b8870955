"""Pure numpy/Python twin of ``_kernels.pyx``.

Used when the compiled extension is missing or ``SQMAP_PURE_PYTHON=1``.
Random draws are consumed in the same order as the compiled version, so
forests built by either implementation are identical.
"""
import math

import numpy as np

IMPLEMENTATION = "python"

EULER_GAMMA = 0.5772156649


def _harmonic(k):
    if k <= 0:
        return 0.0
    if k <= 10:
        h = 0.0
        for i in range(1, k + 1):
            h += 1.0 / i
        return h
    return math.log(k) + EULER_GAMMA


def c_factor(n):
    n = int(n)
    if n <= 1:
        return 0.0
    return 2.0 * _harmonic(n - 1) - 2.0 * (n - 1.0) / n


def _io(xa, ya, za, e1, e2):
    xy = np.power(xa, 2.0 / e2) + np.power(ya, 2.0 / e2)
    return np.power(xy, e2 / e1) + np.power(za, 2.0 / e1)


def inside_outside(pts, ax, ay, az, e1, e2):
    pts = np.asarray(pts, dtype=np.float64)
    return _io(np.abs(pts[:, 0] / ax), np.abs(pts[:, 1] / ay), np.abs(pts[:, 2] / az), e1, e2)


def radial_scale(pts, ax, ay, az, e1, e2):
    pts = np.asarray(pts, dtype=np.float64)
    xa = np.abs(pts[:, 0]) / ax
    ya = np.abs(pts[:, 1]) / ay
    za = np.abs(pts[:, 2]) / az
    m = np.maximum(np.maximum(xa, ya), za)
    out = np.zeros(len(pts))
    nz = m > 0.0
    mm = m[nz]
    out[nz] = mm * np.power(_io(xa[nz] / mm, ya[nz] / mm, za[nz] / mm, e1, e2), e1 / 2.0)
    return out


def radial_distance(pts, ax, ay, az, e1, e2):
    pts = np.asarray(pts, dtype=np.float64)
    k = radial_scale(pts, ax, ay, az, e1, e2)
    out = np.full(len(pts), float(min(ax, ay, az)))
    nz = k != 0.0
    norm = np.sqrt(pts[nz, 0] * pts[nz, 0] + pts[nz, 1] * pts[nz, 1] + pts[nz, 2] * pts[nz, 2])
    out[nz] = norm * np.abs(1.0 - 1.0 / k[nz])
    return out


def grid_costs(pts, w, ax, ay, az, e1s, e2s):
    out = np.empty(len(e1s))
    for k, (e1, e2) in enumerate(zip(e1s, e2s)):
        g = radial_distance(pts, ax, ay, az, e1, e2)
        out[k] = float(np.sum(w * g * g))
    return out


def count_inside(pts, ax, ay, az, e1, e2):
    return radial_scale(pts, ax, ay, az, e1, e2) <= 1.0


def build_forest(X, subsample, normals, uniforms, depth_limit):
    n_trees, psi = subsample.shape
    normal, intercept, left, right, size, depth = [], [], [], [], [], []
    roots = np.zeros(n_trees, dtype=np.int64)

    def new_node():
        normal.append((0.0, 0.0, 0.0))
        intercept.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(0)
        depth.append(0)
        return len(left) - 1

    for t in range(n_trees):
        root = new_node()
        roots[t] = root
        stack = [(root, subsample[t].copy(), 0)]
        r = 0
        while stack:
            node, idx, d = stack.pop()
            depth[node] = d
            size[node] = len(idx)
            if len(idx) <= 1 or d >= depth_limit:
                continue
            n0, n1, n2 = normals[t, r]
            pts = X[idx]
            proj = pts[:, 0] * n0 + pts[:, 1] * n1 + pts[:, 2] * n2
            lo, hi = proj.min(), proj.max()
            if not hi > lo:
                r += 1
                continue
            p = lo + uniforms[t, r] * (hi - lo)
            r += 1
            go_left = proj <= p
            normal[node] = (n0, n1, n2)
            intercept[node] = p
            lnode = new_node()
            rnode = new_node()
            left[node], right[node] = lnode, rnode
            stack.append((rnode, idx[~go_left], d + 1))
            stack.append((lnode, idx[go_left], d + 1))
    return (
        np.array(normal, dtype=np.float64).reshape(-1, 3),
        np.array(intercept, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(size, dtype=np.int64),
        np.array(depth, dtype=np.int64),
        roots,
    )


def mean_path_length(X, normal, intercept, left, right, size, depth, roots):
    n = len(X)
    acc = np.zeros(n)
    leaf_extra = np.array([c_factor(s) for s in size])
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        active = left[node] >= 0
        while active.any():
            cur = node[active]
            x = X[active]
            v = x[:, 0] * normal[cur, 0] + x[:, 1] * normal[cur, 1] + x[:, 2] * normal[cur, 2]
            node[active] = np.where(v <= intercept[cur], left[cur], right[cur])
            active = left[node] >= 0
        acc += depth[node] + leaf_extra[node]
    return acc / len(roots)


def self_path_length(X, normals, uniforms, depth_limit):
    """Mean path length of every point of X in a forest grown on all of X."""
    n_trees = normals.shape[0]
    sub = np.tile(np.arange(len(X), dtype=np.int64), (n_trees, 1))
    forest = build_forest(X, sub, normals, uniforms, depth_limit)
    return mean_path_length(X, *forest)
