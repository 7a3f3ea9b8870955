"""Outlier removal for object point clouds.

Two stages: a reprojection check against the current detection box, and an
Extended Isolation Forest whose branch cuts are random-slope planes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .camera import BBox, CameraFrame, project_points

MIN_FILTER_POINTS = 4
MAX_REMOVED_FRACTION = 0.5


@dataclass(frozen=True)
class EifConfig:
    n_trees: int = 100
    subsample_size: int = 256
    depth_limit: int | None = None  # None -> ceil(log2(subsample))
    score_threshold: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.subsample_size < 2:
            raise ValueError("subsample_size must be >= 2")
        if not 0.0 < self.score_threshold < 1.0:
            raise ValueError("score_threshold must lie in (0, 1)")
        if self.depth_limit is not None and self.depth_limit < 1:
            raise ValueError("depth_limit must be >= 1")


def c_factor(n: int) -> float:
    """Average path length of an unsuccessful BST search over n points."""
    return kernels.c_factor(int(n))


def reprojection_filter(points, frame: CameraFrame, bbox: BBox) -> np.ndarray:
    """Keep-mask: points projecting inside ``bbox`` (inclusive) survive.

    Points behind the camera are kept; this view says nothing about them.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    uv, in_front = project_points(frame, pts)
    inside = ((uv[:, 0] >= bbox.xmin) & (uv[:, 0] <= bbox.xmax)
              & (uv[:, 1] >= bbox.ymin) & (uv[:, 1] <= bbox.ymax))
    return inside | ~in_front


class IsolationForest:
    """Built forest; node arrays of all trees are stored flat."""

    def __init__(self, arrays, subsample_size: int):
        (self.normal, self.intercept, self.left, self.right,
         self.size, self.depth, self.roots) = arrays
        self.subsample_size = subsample_size
        self.norm = c_factor(subsample_size)

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    def tree_depth(self, t: int) -> int:
        """Maximum node depth of tree t."""
        lo = self.roots[t]
        hi = self.roots[t + 1] if t + 1 < self.n_trees else len(self.left)
        return int(self.depth[lo:hi].max())

    def path_lengths(self, points) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        return kernels.mean_path_length(pts, self.normal, self.intercept, self.left,
                                        self.right, self.size, self.depth, self.roots)

    def scores(self, points) -> np.ndarray:
        h = self.path_lengths(points)
        if self.norm <= 0.0:
            return np.full(len(h), 0.5)
        return np.power(2.0, -h / self.norm)


def build_forest(points, cfg: EifConfig = EifConfig()) -> IsolationForest:
    """Grow ``cfg.n_trees`` isolation trees on random subsamples.

    All random draws come from one generator seeded by ``cfg.seed`` and are
    materialised up front as per-tree blocks, so tree t only reads its own
    slice and the forest is identical regardless of build order.
    """
    X = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    n = len(X)
    if n < 2:
        raise ValueError(f"need at least 2 points to build a forest, got {n}")
    psi = min(cfg.subsample_size, n)
    limit = _depth_limit(psi, cfg)
    subsample, normals, uniforms = _draws(n, psi, cfg)
    arrays = kernels.build_forest(X, subsample, normals, uniforms, int(limit))
    return IsolationForest(arrays, psi)


def _depth_limit(psi: int, cfg: EifConfig) -> int:
    return cfg.depth_limit if cfg.depth_limit is not None else max(1, math.ceil(math.log2(psi)))


def _draws(n: int, psi: int, cfg: EifConfig):
    """(subsample, normals, uniforms) for a forest over n points."""
    rng = np.random.default_rng(cfg.seed)
    if psi == n:
        # every tree sees the whole cloud; tree shape does not depend on order
        subsample = None
    else:
        # sampling without replacement: first psi entries of a random permutation
        keys = rng.random((cfg.n_trees, n))
        subsample = np.ascontiguousarray(np.argsort(keys, axis=1, kind="stable")[:, :psi],
                                         dtype=np.int64)
    normals = rng.standard_normal((cfg.n_trees, psi - 1, 3))
    uniforms = rng.random((cfg.n_trees, psi - 1))
    if subsample is None:
        subsample = np.tile(np.arange(n, dtype=np.int64), (cfg.n_trees, 1))
    return subsample, normals, uniforms


def training_scores(points, cfg: EifConfig = EifConfig()) -> np.ndarray:
    """Anomaly scores of the points the forest is grown on.

    Same values as ``build_forest(points, cfg).scores(points)``; when the
    whole cloud fits in one subsample the path lengths are collected while
    the trees are grown, skipping the traversal pass.
    """
    X = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    n = len(X)
    psi = min(cfg.subsample_size, n)
    if psi != n:
        return build_forest(X, cfg).scores(X)
    if n < 2:
        raise ValueError(f"need at least 2 points to build a forest, got {n}")
    _, normals, uniforms = _draws(n, psi, cfg)
    h = kernels.self_path_length(X, normals, uniforms, int(_depth_limit(psi, cfg)))
    return np.power(2.0, -h / c_factor(psi))


def anomaly_score(forest: IsolationForest, point) -> float:
    return float(forest.scores(np.asarray(point, dtype=np.float64).reshape(1, 3))[0])


@dataclass
class FilterResult:
    kept: np.ndarray
    scores: np.ndarray | None
    skipped: bool = False

    @property
    def n_removed(self) -> int:
        return int(np.count_nonzero(~self.kept))


def filter_outliers(points, cfg: EifConfig = EifConfig()) -> FilterResult:
    """Drop points whose anomaly score exceeds the threshold.

    At most half of the cloud is removed per call (highest scores first).
    Clouds with fewer than four points are returned untouched with
    ``skipped=True``.
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = len(X) if X.size else 0
    if n < MIN_FILTER_POINTS:
        return FilterResult(np.ones(n, dtype=bool), None, skipped=True)
    scores = training_scores(X, cfg)
    flagged = scores > cfg.score_threshold
    if np.ptp(scores) == 0.0:
        flagged[:] = False
    cap = int(n * MAX_REMOVED_FRACTION)
    if np.count_nonzero(flagged) > cap:
        order = np.argsort(-scores, kind="stable")
        flagged[:] = False
        flagged[order[:cap]] = True
    return FilterResult(~flagged, scores)
