"""Size and shape recovery for a posed object point cloud.

Size is half the per-axis extent in the object frame. The exponents are then
fitted by minimising the distance-weighted squared radial distance with a
box-constrained Levenberg-Marquardt solver, started from the best point of a
coarse grid over [0.1, 1.9]^2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import (EPS_MAX, EPS_MIN, ObjectPose, ShapeParams, SizeParams, Superquadric,
                       object_to_world, world_to_object)

JAC_STEP = 1e-4


class FitError(ValueError):
    """Raised when a cloud cannot be fitted (degenerate or non-finite)."""


class NonFiniteCostError(FitError):
    """The fit cost could not be evaluated anywhere on the start grid."""


@dataclass(frozen=True)
class FitConfig:
    grid_steps: int = 10
    max_iterations: int = 50
    convergence_tol: float = 1e-10
    lm_lambda_init: float = 1e-3
    lm_lambda_factor: float = 10.0

    def __post_init__(self):
        if self.grid_steps < 2:
            raise ValueError("grid_steps must be >= 2")
        for name in ("max_iterations", "convergence_tol", "lm_lambda_init", "lm_lambda_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def size_from_extent(points_obj) -> SizeParams:
    pts = np.atleast_2d(np.asarray(points_obj, dtype=np.float64))
    if len(pts) < 2:
        raise FitError(f"need at least 2 points for an extent, got {len(pts)}")
    half = (pts.max(axis=0) - pts.min(axis=0)) / 2.0
    if np.any(half <= 0.0):
        raise FitError(f"degenerate cloud: zero extent on axis {int(np.argmin(half))}")
    return SizeParams(*half)


def compute_weights(points_obj) -> np.ndarray:
    """Per-point weights rising linearly from 0 (closest to the centre) to 1
    (farthest). A cloud with equal norms gets uniform weights of 1."""
    pts = np.atleast_2d(np.asarray(points_obj, dtype=np.float64))
    norms = np.linalg.norm(pts, axis=1)
    lo, hi = norms.min(), norms.max()
    if hi - lo <= 1e-12 * max(hi, 1.0):
        return np.ones(len(pts))
    return (norms - lo) / (hi - lo)


def signed_radial(points_obj, size: SizeParams, eps1: float, eps2: float) -> np.ndarray:
    """Radial distance with a sign: positive outside, negative inside.

    Its square equals the squared radial distance, but unlike |.| it is
    smooth through the surface, which keeps finite-difference Jacobians
    accurate near a perfect fit.
    """
    pts = np.ascontiguousarray(points_obj, dtype=np.float64)
    k = kernels.radial_scale(pts, size.ax, size.ay, size.az, eps1, eps2)
    out = np.full(len(pts), min(size.ax, size.ay, size.az))  # centre: see radial_distance
    nz = k != 0.0
    out[nz] = np.linalg.norm(pts[nz], axis=1) * (1.0 - 1.0 / k[nz])
    return out


def weighted_residuals(points_obj, weights, size: SizeParams, eps1: float, eps2: float) -> np.ndarray:
    """sqrt(w_i) * G_i with signed G; the squared norm is the fit cost."""
    return np.sqrt(weights) * signed_radial(points_obj, size, eps1, eps2)


def weighted_cost(points_obj, weights, size: SizeParams, eps1: float, eps2: float) -> float:
    r = weighted_residuals(points_obj, weights, size, eps1, eps2)
    return float(r @ r)


def residual_jacobian(points_obj, weights, size: SizeParams, eps1: float, eps2: float,
                      step: float = JAC_STEP) -> np.ndarray:
    """Central-difference Jacobian of the weighted residuals, shape (n, 2)."""
    cols = []
    for d in ((step, 0.0), (0.0, step)):
        rp = weighted_residuals(points_obj, weights, size, eps1 + d[0], eps2 + d[1])
        rm = weighted_residuals(points_obj, weights, size, eps1 - d[0], eps2 - d[1])
        cols.append((rp - rm) / (2.0 * step))
    return np.column_stack(cols)


def grid_initialisation(points_obj, weights, size: SizeParams, steps: int):
    """Best grid sample: (eps1, eps2, cost). Ties go to the lexicographically
    smallest pair."""
    axis = np.linspace(EPS_MIN, EPS_MAX, steps)
    e1s, e2s = (g.ravel() for g in np.meshgrid(axis, axis, indexing="ij"))
    costs = kernels.grid_costs(points_obj, np.ascontiguousarray(weights), size.ax, size.ay,
                               size.az, np.ascontiguousarray(e1s), np.ascontiguousarray(e2s))
    finite = np.isfinite(costs)
    if not finite.any():
        raise NonFiniteCostError("cost is non-finite at every grid sample")
    k = int(np.argmin(np.where(finite, costs, np.inf)))  # first minimum = lexicographic tie-break
    return float(e1s[k]), float(e2s[k]), float(costs[k])


def fit_shape(points_obj, size: SizeParams, cfg: FitConfig = FitConfig(), trace: list | None = None):
    """Fit (eps1, eps2) with size held fixed. Returns (ShapeParams, cost).

    If ``trace`` is a list, the cost after every accepted step is appended,
    starting with the grid initialisation.
    """
    pts = np.ascontiguousarray(np.atleast_2d(points_obj), dtype=np.float64)
    if len(pts) < 8:
        raise FitError(f"too few points for a shape fit: {len(pts)} < 8")
    w = compute_weights(pts)
    e1, e2, cost = grid_initialisation(pts, w, size, cfg.grid_steps)
    if trace is not None:
        trace.append(cost)
    x = np.array([e1, e2])
    r = weighted_residuals(pts, w, size, *x)
    lam = cfg.lm_lambda_init
    for _ in range(cfg.max_iterations):
        J = residual_jacobian(pts, w, size, *x)
        if not np.all(np.isfinite(J)):
            break
        A = J.T @ J
        g = J.T @ r
        damp = np.diag(np.where(np.diag(A) > 0, np.diag(A), 1.0))
        accepted = False
        while lam < 1e12:
            try:
                delta = np.linalg.solve(A + lam * damp, -g)
            except np.linalg.LinAlgError:
                lam *= cfg.lm_lambda_factor
                continue
            x_new = np.clip(x + delta, EPS_MIN, EPS_MAX)
            r_new = weighted_residuals(pts, w, size, *x_new)
            c_new = float(r_new @ r_new)
            if np.isfinite(c_new) and c_new < cost:
                accepted = True
                improvement = cost - c_new
                step = np.abs(x_new - x).max()
                x, r, cost = x_new, r_new, c_new
                lam = max(lam / cfg.lm_lambda_factor, 1e-12)
                if trace is not None:
                    trace.append(cost)
                break
            lam *= cfg.lm_lambda_factor
        if not accepted:
            break
        if improvement <= cfg.convergence_tol * max(cost, 1e-300) or step < 1e-10:
            break
    return ShapeParams(*x), cost


def fit_landmark(points_world, pose: ObjectPose, cfg: FitConfig = FitConfig(),
                 recenter: bool = False) -> Superquadric:
    """Fit size and shape of a cloud seen under ``pose``.

    With ``recenter`` the translation is moved to the centre of the cloud's
    object-frame extent before fitting, which matters when one side of the
    object (e.g. its underside) was never observed.
    """
    pts = world_to_object(pose, np.atleast_2d(points_world))
    if len(pts) < 8:
        raise FitError(f"too few points for a shape fit: {len(pts)} < 8")
    if recenter:
        mid = (pts.max(axis=0) + pts.min(axis=0)) / 2.0
        pose = ObjectPose(pose.yaw, tuple(object_to_world(pose, mid)))
        pts = pts - mid
    size = size_from_extent(pts)
    shape, _ = fit_shape(pts, size, cfg)
    return Superquadric(size, shape, pose)
