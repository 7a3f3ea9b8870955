"""Object translation and yaw estimation.

Translation is the point-cloud centroid. Yaw comes from aligning the
projected object axes with detected image line segments, or from the
principal direction of the cloud in the ground plane when no edges match.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import BEHIND_DEPTH, CameraFrame, Segment2D, project_segment
from .geometry import rot_z, wrap_angle

MATCH_THRESHOLD = math.radians(5.0)
N_YAW_SAMPLES = 18
YAW_SAMPLE_RANGE = math.radians(45.0)
GN_STEP = math.radians(0.1)
GN_TOL = math.radians(0.01)
GN_MAX_ITER = 20
QUARTER = math.pi / 2

LINE = "line_alignment"
PCA = "pca"


@dataclass(frozen=True)
class YawEstimate:
    yaw: float
    n_matches: int
    residual: float
    method: str
    ok: bool = True


@dataclass(frozen=True)
class YawHistory:
    n: int = 0
    yaw_running: float = 0.0


def centroid_translation(points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.size == 0:
        raise ValueError("cannot take the centroid of an empty cloud")
    return pts.mean(axis=0)


def axis_segments(yaw: float, translation) -> np.ndarray:
    """Unit segments along the object X, Y, Z axes in world coordinates,
    shape (3, 2, 3): [axis, (start, end), xyz]."""
    t = np.asarray(translation, dtype=np.float64)
    R = rot_z(yaw)
    starts = np.tile(t, (3, 1))
    return np.stack([starts, starts + R.T], axis=1)


def line_angle_error(a: float, b: float) -> float:
    """Signed difference of two undirected line angles, wrapped to (-pi/2, pi/2]."""
    d = (a - b) % math.pi
    return d - math.pi if d > QUARTER else d


def _greedy_match(err: np.ndarray):
    """Pair axes with detections by ascending error below the threshold; each
    axis and each detection is used at most once."""
    n_axes, n_det = err.shape
    cand = [(err[i, j], i, j) for i in range(n_axes) for j in range(n_det)
            if err[i, j] < MATCH_THRESHOLD]
    cand.sort()
    used_a, used_d, matches = set(), set(), []
    for _, i, j in cand:
        if i in used_a or j in used_d:
            continue
        used_a.add(i)
        used_d.add(j)
        matches.append((i, j))
    matches.sort()
    return matches


def match_segments(projected, detected):
    """Match each projected axis segment to the detected segment with the
    closest line angle (< 5 degrees), greedily by ascending error."""
    err = np.full((len(projected), len(detected)), np.inf)
    for i, ps in enumerate(projected):
        if ps is None:
            continue
        for j, ds in enumerate(detected):
            err[i, j] = abs(line_angle_error(ps.angle, ds.angle))
    return _greedy_match(err)


def _local_axis_angles(yaws, frame: CameraFrame, pixels: np.ndarray) -> np.ndarray:
    """Image angle of each object axis at each pixel, shape (n_yaw, 3, n).

    The image of a 3D line with direction d through the ray of pixel m has
    direction (fx (dx - x dz), fy (dy - y dz)) at m, where (x, y) are the
    normalised coordinates of m and d is expressed in the camera frame. This
    is independent of depth, so it applies to any object edge parallel to d.
    NaN marks axes pointing along the viewing ray.
    """
    k = frame.intrinsics
    yaws = np.atleast_1d(np.asarray(yaws, dtype=np.float64))
    c, s = np.cos(yaws), np.sin(yaws)
    # rows of rot_z(yaw).T are the object axes in world coordinates
    axes = np.zeros((len(yaws), 3, 3))
    axes[:, 0, 0], axes[:, 0, 1] = c, s
    axes[:, 1, 0], axes[:, 1, 1] = -s, c
    axes[:, 2, 2] = 1.0
    d_cam = axes @ frame.rotation
    xn = (pixels[:, 0] - k.cx) / k.fx
    yn = (pixels[:, 1] - k.cy) / k.fy
    u = k.fx * (d_cam[:, :, 0:1] - xn * d_cam[:, :, 2:3])
    v = k.fy * (d_cam[:, :, 1:2] - yn * d_cam[:, :, 2:3])
    ang = np.arctan2(v, u) % math.pi
    ang[np.hypot(u, v) < 1e-9] = np.nan
    return ang


def _error_matrix(yaws, frame, mids, det_angles):
    """Signed line-angle errors, shape (n_yaw, 3, n_det); NaN where undefined."""
    ang = _local_axis_angles(yaws, frame, mids)
    d = (ang - det_angles) % math.pi
    return np.where(d > QUARTER, d - math.pi, d)


def _match_from_signed(signed):
    err = np.where(np.isnan(signed), np.inf, np.abs(signed))
    matches = _greedy_match(err)
    res = float(sum(signed[i, j] ** 2 for i, j in matches))
    return matches, res


def _support_from_signed(signed):
    """Pair every detected segment with its closest axis when the angle error
    is below the threshold. Returns (pairs sorted by segment, residual)."""
    err = np.where(np.isnan(signed), np.inf, np.abs(signed))
    axis = np.argmin(err, axis=0)
    cols = np.arange(err.shape[1])
    keep = err[axis, cols] < MATCH_THRESHOLD
    pairs = [(int(axis[j]), int(j)) for j in cols[keep]]
    res = float(np.sum(signed[axis[keep], cols[keep]] ** 2))
    return pairs, res


def _match_at(yaw, frame, mids, det_angles):
    return _match_from_signed(_error_matrix(yaw, frame, mids, det_angles)[0])


def _residuals(yaws, frame, mids, det_angles, matches):
    """Residuals of the matched pairs, shape (n_yaw, n_matches)."""
    signed = _error_matrix(yaws, frame, mids, det_angles)
    ia = [i for i, _ in matches]
    jd = [j for _, j in matches]
    return np.nan_to_num(signed[:, ia, jd], nan=QUARTER)


def _refine(theta, frame, mids, det_angles, matches):
    """Damped Gauss-Newton on the squared angle errors of fixed pairs."""
    r = _residuals(theta, frame, mids, det_angles, matches)[0]
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(GN_MAX_ITER):
        rp, rm = _residuals([theta + GN_STEP, theta - GN_STEP], frame, mids, det_angles, matches)
        jac = (rp - rm) / (2 * GN_STEP)
        jtj = float(jac @ jac)
        if jtj < 1e-12:
            break  # only yaw-invariant (vertical) axes matched
        g = float(jac @ r)
        step = None
        while lam < 1e8:
            delta = -g / (jtj * (1.0 + lam))
            r_new = _residuals(theta + delta, frame, mids, det_angles, matches)[0]
            c_new = float(r_new @ r_new)
            if c_new <= cost:
                step = delta
                theta, r, cost = theta + delta, r_new, c_new
                lam = max(lam / 10.0, 1e-9)
                break
            lam *= 10.0
        if step is None or abs(step) < GN_TOL:
            break
    return theta, cost


def estimate_yaw_lines(points_centroid, detected, frame: CameraFrame) -> YawEstimate:
    """Yaw that best aligns the projected object axes with detected segments.

    Every detected segment is paired with the axis whose projected direction
    is closest (below 5 degrees). Eighteen yaw samples spaced 5 degrees over
    [-45, 45) seed the search; the sample with the most pairs (then smallest
    residual, then smallest |yaw|) is refined by damped Gauss-Newton on the
    squared angle errors of its pairs, re-pairing until the set is stable.
    The axis direction is evaluated at each detected segment's midpoint so
    perspective does not bias the comparison.
    """
    detected = [s for s in detected if s is not None]
    if not detected:
        return YawEstimate(0.0, 0, math.inf, LINE, ok=False)
    c = frame.to_camera(np.asarray(points_centroid, dtype=np.float64).reshape(1, 3))[0]
    if c[2] <= BEHIND_DEPTH:
        return YawEstimate(0.0, 0, math.inf, LINE, ok=False)
    mids = np.array([s.midpoint for s in detected])
    det_angles = np.array([s.angle for s in detected])

    samples = np.linspace(-YAW_SAMPLE_RANGE, YAW_SAMPLE_RANGE, N_YAW_SAMPLES, endpoint=False)
    signed = _error_matrix(samples, frame, mids, det_angles)
    best = None
    for th, sg in zip(samples, signed):
        pairs, res = _support_from_signed(sg)
        key = (-len(pairs), res, abs(th))
        if best is None or key < best[0]:
            best = (key, th, pairs)
    _, theta, pairs = best
    if not pairs:
        return YawEstimate(0.0, 0, math.inf, LINE, ok=False)

    for _ in range(3):
        theta, cost = _refine(theta, frame, mids, det_angles, pairs)
        new_pairs, _ = _support_from_signed(_error_matrix(theta, frame, mids, det_angles)[0])
        if new_pairs == pairs or len(new_pairs) < len(pairs):
            break
        pairs = new_pairs
    else:
        theta, cost = _refine(theta, frame, mids, det_angles, pairs)
    return YawEstimate(wrap_angle(theta), len(pairs), cost, LINE)


def principal_angle(points):
    """Orientation in (-pi/2, pi/2] of the dominant X-Y principal direction,
    or None when the projected covariance is rank deficient or isotropic."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(pts) < 3:
        return None
    xy = pts[:, :2] - pts[:, :2].mean(axis=0)
    cov = xy.T @ xy / len(xy)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(evals[1], 1e-300)
    if evals[0] <= 1e-9 * scale or evals[1] - evals[0] <= 1e-9 * scale:
        return None
    v = evecs[:, 1]
    yaw = math.atan2(v[1], v[0])
    if yaw > QUARTER:
        yaw -= math.pi
    elif yaw <= -QUARTER:
        yaw += math.pi
    return yaw


def estimate_yaw_pca(points) -> YawEstimate:
    """Yaw from the principal direction of the ground-plane projection,
    folded by :func:`normalize_yaw_singularity`."""
    yaw = principal_angle(points)
    if yaw is None:
        return YawEstimate(0.0, 0, math.inf, PCA, ok=False)
    return YawEstimate(normalize_yaw_singularity(yaw)[0], 0, 0.0, PCA)


def normalize_yaw_singularity(yaw: float):
    """Fold yaw into (-pi/4, pi/4] by quarter turns.

    A quarter turn with the X and Y semi-axes swapped describes the same
    body, so the returned flag says whether an odd number of turns was
    applied (the caller should swap ax and ay).
    """
    k = math.ceil((yaw - QUARTER / 2) / QUARTER)
    # k quarter-turns removed; guard the half-open boundary against rounding
    out = yaw - k * QUARTER
    if out <= -QUARTER / 2:
        out += QUARTER
        k -= 1
    elif out > QUARTER / 2:
        out -= QUARTER
        k += 1
    return out, k % 2 == 1


def update_yaw(history: YawHistory, new_yaw: float) -> YawHistory:
    """Running mean of yaw observations, theta_n = (1 - 1/n) theta_{n-1} + theta*/n.

    The new value is first shifted by quarter turns to lie within pi/4 of the
    running value, so estimates either side of the +-45 degree seam average
    sensibly.
    """
    n = history.n + 1
    if history.n == 0:
        return YawHistory(1, float(new_yaw))
    k = round((history.yaw_running - new_yaw) / QUARTER)
    y = new_yaw + k * QUARTER
    # theta_{n-1} + (theta* - theta_{n-1}) / n: same recursion, exact for repeats
    return YawHistory(n, history.yaw_running + (y - history.yaw_running) / n)


def combine_yaw(a: YawHistory, b: YawHistory) -> YawHistory:
    """Pool two yaw histories as if all observations had been averaged together."""
    if a.n == 0:
        return b
    if b.n == 0:
        return a
    k = round((a.yaw_running - b.yaw_running) / QUARTER)
    yb = b.yaw_running + k * QUARTER
    n = a.n + b.n
    return YawHistory(n, (a.n * a.yaw_running + b.n * yb) / n)


def projected_axes(frame: CameraFrame, yaw: float, translation):
    """Project the three axis segments of a pose; entries may be None."""
    segs = axis_segments(yaw, translation)
    return [project_segment(frame, s[0], s[1]) for s in segs]


__all__ = [
    "YawEstimate", "YawHistory", "centroid_translation", "axis_segments",
    "match_segments", "estimate_yaw_lines", "estimate_yaw_pca", "principal_angle",
    "normalize_yaw_singularity", "update_yaw", "combine_yaw", "projected_axes",
    "line_angle_error", "Segment2D",
]
