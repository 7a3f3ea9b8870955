# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: superquadric evaluation and isolation-forest trees.

Every function here has a bit-for-bit counterpart in ``_kernels_py``; the two
must consume random draws in the same order and accumulate dot products in
the same order (x*n0 + y*n1 + z*n2).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, fmax, fmin, pow, sqrt, log, INFINITY

cnp.import_array()

IMPLEMENTATION = "cython"

cdef double EULER_GAMMA = 0.5772156649


cdef inline double _harmonic(long k) noexcept nogil:
    cdef double h = 0.0
    cdef long i
    if k <= 0:
        return 0.0
    if k <= 10:
        for i in range(1, k + 1):
            h += 1.0 / i
        return h
    return log(<double>k) + EULER_GAMMA


cdef inline double _c_factor(long n) noexcept nogil:
    if n <= 1:
        return 0.0
    return 2.0 * _harmonic(n - 1) - 2.0 * (n - 1.0) / n


def c_factor(long n):
    return _c_factor(n)


cdef inline double _io(double x, double y, double z, double ax, double ay,
                       double az, double e1, double e2) noexcept nogil:
    cdef double xy = pow(fabs(x / ax), 2.0 / e2) + pow(fabs(y / ay), 2.0 / e2)
    return pow(xy, e2 / e1) + pow(fabs(z / az), 2.0 / e1)


cdef inline double _scale(double x, double y, double z, double ax, double ay,
                          double az, double e1, double e2) noexcept nogil:
    # F(p)**(e1/2) is homogeneous of degree one; normalising by the largest
    # axis ratio keeps the powers bounded.
    cdef double xa = fabs(x) / ax
    cdef double ya = fabs(y) / ay
    cdef double za = fabs(z) / az
    cdef double m = xa
    if ya > m:
        m = ya
    if za > m:
        m = za
    if m == 0.0:
        return 0.0
    return m * pow(_io(xa / m, ya / m, za / m, 1.0, 1.0, 1.0, e1, e2), e1 / 2.0)


def inside_outside(const double[:, ::1] pts, double ax, double ay, double az,
                   double e1, double e2):
    cdef Py_ssize_t n = pts.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _io(pts[i, 0], pts[i, 1], pts[i, 2], ax, ay, az, e1, e2)
    return out


def radial_scale(const double[:, ::1] pts, double ax, double ay, double az,
                 double e1, double e2):
    cdef Py_ssize_t n = pts.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _scale(pts[i, 0], pts[i, 1], pts[i, 2], ax, ay, az, e1, e2)
    return out


cdef inline double _radial(double x, double y, double z, double ax, double ay,
                           double az, double e1, double e2, double amin) noexcept nogil:
    cdef double k = _scale(x, y, z, ax, ay, az, e1, e2)
    if k == 0.0:
        return amin
    return sqrt(x * x + y * y + z * z) * fabs(1.0 - 1.0 / k)


def radial_distance(const double[:, ::1] pts, double ax, double ay, double az,
                    double e1, double e2):
    cdef Py_ssize_t n = pts.shape[0], i
    cdef double amin = min(ax, ay, az)
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _radial(pts[i, 0], pts[i, 1], pts[i, 2], ax, ay, az, e1, e2, amin)
    return out


def grid_costs(const double[:, ::1] pts, const double[::1] w, double ax,
               double ay, double az, const double[::1] e1s, const double[::1] e2s):
    """Weighted squared radial cost for each (e1s[k], e2s[k]) pair."""
    cdef Py_ssize_t n = pts.shape[0], m = e1s.shape[0], i, k
    cdef double amin = min(ax, ay, az), acc, g
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for k in range(m):
            acc = 0.0
            for i in range(n):
                g = _radial(pts[i, 0], pts[i, 1], pts[i, 2], ax, ay, az,
                            e1s[k], e2s[k], amin)
                acc += w[i] * g * g
            o[k] = acc
    return out


def count_inside(const double[:, ::1] pts, double ax, double ay, double az,
                 double e1, double e2):
    """Boolean mask of points with F <= 1."""
    cdef Py_ssize_t n = pts.shape[0], i
    out = np.empty(n, dtype=np.bool_)
    cdef cnp.npy_bool[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _scale(pts[i, 0], pts[i, 1], pts[i, 2], ax, ay, az, e1, e2) <= 1.0
    return out


def build_forest(const double[:, ::1] X, const long[:, ::1] subsample,
                 const double[:, :, ::1] normals, const double[:, ::1] uniforms,
                 long depth_limit):
    """Grow one tree per row of ``subsample``.

    Node arrays of all trees are concatenated; ``roots[t]`` is the root of
    tree t. Internal nodes have ``left >= 0``; leaves store ``size``.
    """
    cdef Py_ssize_t n_trees = subsample.shape[0], psi = subsample.shape[1]
    cdef Py_ssize_t cap = n_trees * (2 * psi - 1)
    # uninitialised; every node written is fully set below
    normal_a = np.empty((cap, 3), dtype=np.float64)
    intercept_a = np.empty(cap, dtype=np.float64)
    left_a = np.empty(cap, dtype=np.int64)
    right_a = np.empty(cap, dtype=np.int64)
    size_a = np.empty(cap, dtype=np.int64)
    depth_a = np.empty(cap, dtype=np.int64)
    roots_a = np.zeros(n_trees, dtype=np.int64)
    cdef double[:, ::1] nrm = normal_a
    cdef double[::1] icp = intercept_a
    cdef long[::1] lft = left_a, rgt = right_a, sz = size_a, dep = depth_a, roots = roots_a

    idx_a = np.empty(psi, dtype=np.int64)
    tmp_a = np.empty(psi, dtype=np.int64)
    tmp2_a = np.empty(psi, dtype=np.int64)
    proj_a = np.empty(psi, dtype=np.float64)
    stack_a = np.empty((psi * 2 + 2, 4), dtype=np.int64)
    cdef long[::1] idx = idx_a, tmp = tmp_a, tmp2 = tmp2_a
    cdef double[::1] proj = proj_a
    cdef long[:, ::1] stack = stack_a

    cdef Py_ssize_t t, k, nl, nr
    cdef long node, s, e, d, top, count = 0, r, j, c
    cdef double n0, n1, n2, lo, hi, p, v

    with nogil:
        for t in range(n_trees):
            for k in range(psi):
                idx[k] = subsample[t, k]
            roots[t] = count
            count += 1
            top = 0
            stack[0, 0] = roots[t]; stack[0, 1] = 0; stack[0, 2] = psi; stack[0, 3] = 0
            top = 1
            r = 0
            while top > 0:
                top -= 1
                node = stack[top, 0]; s = stack[top, 1]; e = stack[top, 2]; d = stack[top, 3]
                dep[node] = d
                sz[node] = e - s
                lft[node] = -1
                rgt[node] = -1
                nrm[node, 0] = 0.0; nrm[node, 1] = 0.0; nrm[node, 2] = 0.0
                icp[node] = 0.0
                if e - s <= 1 or d >= depth_limit:
                    continue
                n0 = normals[t, r, 0]; n1 = normals[t, r, 1]; n2 = normals[t, r, 2]
                lo = INFINITY
                hi = -INFINITY
                for k in range(s, e):
                    j = idx[k]
                    v = X[j, 0] * n0 + X[j, 1] * n1 + X[j, 2] * n2
                    proj[k] = v
                    lo = fmin(lo, v)
                    hi = fmax(hi, v)
                if not (hi > lo):
                    r += 1
                    continue
                p = lo + uniforms[t, r] * (hi - lo)
                r += 1
                # stable partition, branch-free: left (proj <= p) first
                nl = 0
                nr = 0
                for k in range(s, e):
                    c = proj[k] <= p
                    tmp[nl] = idx[k]
                    tmp2[nr] = idx[k]
                    nl += c
                    nr += 1 - c
                for k in range(nl):
                    idx[s + k] = tmp[k]
                for k in range(nr):
                    idx[s + nl + k] = tmp2[k]
                nrm[node, 0] = n0; nrm[node, 1] = n1; nrm[node, 2] = n2
                icp[node] = p
                lft[node] = count
                rgt[node] = count + 1
                count += 2
                stack[top, 0] = rgt[node]; stack[top, 1] = s + nl; stack[top, 2] = e; stack[top, 3] = d + 1
                top += 1
                stack[top, 0] = lft[node]; stack[top, 1] = s; stack[top, 2] = s + nl; stack[top, 3] = d + 1
                top += 1
    return (normal_a[:count].copy(), intercept_a[:count].copy(), left_a[:count].copy(),
            right_a[:count].copy(), size_a[:count].copy(), depth_a[:count].copy(), roots_a)


def mean_path_length(const double[:, ::1] X, const double[:, ::1] normal,
                     const double[::1] intercept, const long[::1] left,
                     const long[::1] right, const long[::1] size,
                     const long[::1] depth, const long[::1] roots):
    cdef Py_ssize_t n = X.shape[0], n_trees = roots.shape[0], n_nodes = left.shape[0], i, t
    cdef long node, max_size = 0
    cdef double acc, v
    out = np.empty(n, dtype=np.float64)
    leaf_a = np.empty(n_nodes, dtype=np.float64)
    cdef double[::1] o = out, leaf = leaf_a
    with nogil:
        for i in range(n_nodes):
            if size[i] > max_size:
                max_size = size[i]
    c_tab_a = np.empty(max_size + 1, dtype=np.float64)
    cdef double[::1] c_tab = c_tab_a
    with nogil:
        for i in range(max_size + 1):
            c_tab[i] = _c_factor(i)
        for i in range(n_nodes):
            leaf[i] = depth[i] + c_tab[size[i]]
        for i in range(n):
            acc = 0.0
            for t in range(n_trees):
                node = roots[t]
                while left[node] >= 0:
                    v = X[i, 0] * normal[node, 0] + X[i, 1] * normal[node, 1] + X[i, 2] * normal[node, 2]
                    if v <= intercept[node]:
                        node = left[node]
                    else:
                        node = right[node]
                acc += leaf[node]
            o[i] = acc / n_trees
    return out


def self_path_length(const double[:, ::1] X, const double[:, :, ::1] normals,
                     const double[:, ::1] uniforms, long depth_limit):
    """Mean path length of every point of X in a forest whose trees are all
    grown on the whole of X.

    Equals ``mean_path_length(X, *build_forest(X, subsample, ...))`` with
    ``subsample[t] = arange(n)``: a training point ends in the leaf it was
    routed to while the tree was grown, so no traversal is needed.
    """
    cdef Py_ssize_t n = X.shape[0], n_trees = normals.shape[0], t, k, nl, nr
    cdef long s, e, d, top, r, j, c
    cdef double n0, n1, n2, lo, hi, p, v, lv
    out = np.zeros(n, dtype=np.float64)
    c_tab_a = np.empty(n + 1, dtype=np.float64)
    idx_a = np.empty(n, dtype=np.int64)
    tmp_a = np.empty(n, dtype=np.int64)
    tmp2_a = np.empty(n, dtype=np.int64)
    proj_a = np.empty(n, dtype=np.float64)
    stack_a = np.empty((n * 2 + 2, 3), dtype=np.int64)
    cdef double[::1] acc = out, c_tab = c_tab_a, proj = proj_a
    cdef long[::1] idx = idx_a, tmp = tmp_a, tmp2 = tmp2_a
    cdef long[:, ::1] stack = stack_a
    with nogil:
        for k in range(n + 1):
            c_tab[k] = _c_factor(k)
        for t in range(n_trees):
            for k in range(n):
                idx[k] = k
            stack[0, 0] = 0; stack[0, 1] = n; stack[0, 2] = 0
            top = 1
            r = 0
            while top > 0:
                top -= 1
                s = stack[top, 0]; e = stack[top, 1]; d = stack[top, 2]
                if e - s > 1 and d < depth_limit:
                    n0 = normals[t, r, 0]; n1 = normals[t, r, 1]; n2 = normals[t, r, 2]
                    lo = INFINITY
                    hi = -INFINITY
                    for k in range(s, e):
                        j = idx[k]
                        v = X[j, 0] * n0 + X[j, 1] * n1 + X[j, 2] * n2
                        proj[k] = v
                        lo = fmin(lo, v)
                        hi = fmax(hi, v)
                    if hi > lo:
                        p = lo + uniforms[t, r] * (hi - lo)
                        r += 1
                        nl = 0
                        nr = 0
                        for k in range(s, e):
                            c = proj[k] <= p
                            tmp[nl] = idx[k]
                            tmp2[nr] = idx[k]
                            nl += c
                            nr += 1 - c
                        for k in range(nl):
                            idx[s + k] = tmp[k]
                        for k in range(nr):
                            idx[s + nl + k] = tmp2[k]
                        stack[top, 0] = s + nl; stack[top, 1] = e; stack[top, 2] = d + 1
                        top += 1
                        stack[top, 0] = s; stack[top, 1] = s + nl; stack[top, 2] = d + 1
                        top += 1
                        continue
                    r += 1
                # leaf
                lv = d + c_tab[e - s]
                for k in range(s, e):
                    acc[idx[k]] += lv
        for k in range(n):
            acc[k] = acc[k] / n_trees
    return out
