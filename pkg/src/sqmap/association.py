"""Observation-to-landmark association and duplicate-landmark detection.

Consecutive detections are linked by 2D box overlap or shared map points.
Detections after a gap are tested against each landmark's centroid history
with a single-sample t-test, and duplicate landmarks are found with a
pooled two-sample t-test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import betainc

from .camera import BBox

DEGENERATE_TOL = 1e-6
ISOLATED_TESTS = ("predictive", "paper")


@dataclass(frozen=True)
class AssocConfig:
    iou_threshold: float = 0.3
    shared_point_threshold: int = 5
    significance_alpha: float = 0.05
    min_history: int = 3
    isolated_test: str = "predictive"  # "predictive" | "paper"
    family_wise: bool = True  # test each axis at alpha / 3

    def __post_init__(self):
        if self.isolated_test not in ISOLATED_TESTS:
            raise ValueError(f"isolated_test must be one of {ISOLATED_TESTS}")
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if not 0.0 < self.significance_alpha < 1.0:
            raise ValueError("significance_alpha must lie in (0, 1)")
        if self.min_history < 2:
            raise ValueError("min_history must be >= 2")
        if self.shared_point_threshold < 1:
            raise ValueError("shared_point_threshold must be >= 1")


class CentroidHistory:
    """Per-observation centroids of one landmark, with sample mean and
    per-axis standard deviation (ddof=1)."""

    def __init__(self, samples=()):
        self._samples = [np.asarray(s, dtype=np.float64).reshape(3) for s in samples]
        self._stats = None

    def append(self, c):
        self._samples.append(np.asarray(c, dtype=np.float64).reshape(3))
        self._stats = None

    def extend(self, other: "CentroidHistory"):
        self._samples.extend(other._samples)
        self._stats = None

    def copy(self) -> "CentroidHistory":
        return CentroidHistory(self._samples)

    def __len__(self):
        return len(self._samples)

    @property
    def samples(self) -> np.ndarray:
        return np.array(self._samples).reshape(-1, 3)

    def _compute(self):
        if self._stats is None:
            s = self.samples
            mean = s.mean(axis=0) if len(s) else np.full(3, np.nan)
            std = s.std(axis=0, ddof=1) if len(s) > 1 else np.zeros(3)
            self._stats = (mean, std)
        return self._stats

    @property
    def mean(self) -> np.ndarray:
        return self._compute()[0]

    @property
    def std(self) -> np.ndarray:
        return self._compute()[1]


def bbox_iou(a: BBox, b: BBox) -> float:
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@lru_cache(maxsize=4096)
def t_critical(alpha: float, df: int) -> float:
    """Two-sided critical value t_{alpha/2, df}.

    Uses P(|T| > t) = I_x(df/2, 1/2) with x = df / (df + t^2): solve
    I_x = alpha for x by root finding, then t = sqrt(df (1 - x) / x).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if df < 1:
        raise ValueError("df must be >= 1")
    a, b = df / 2.0, 0.5
    x = brentq(lambda x: betainc(a, b, x) - alpha, 0.0, 1.0, xtol=1e-300, rtol=4 * np.finfo(float).eps,
               maxiter=500)
    return math.sqrt(df * (1.0 - x) / x)


def _t_with_degenerate(diff: np.ndarray, scale: np.ndarray) -> np.ndarray:
    t = np.empty(3)
    for k in range(3):
        if scale[k] > 0.0:
            t[k] = diff[k] / scale[k]
        else:
            t[k] = 0.0 if abs(diff[k]) <= DEGENERATE_TOL else math.inf
    return t


def t_statistic_single(history: CentroidHistory, centroid):
    """Per-axis t = sqrt(n) (mean - c) / sigma, with df = n - 1.

    An axis whose history has zero spread gets t = 0 if the centroid matches
    the mean to 1e-6 and infinity otherwise.
    """
    n = len(history)
    if n < 2:
        raise ValueError("single-sample test needs at least 2 history samples")
    diff = history.mean - np.asarray(centroid, dtype=np.float64)
    return _t_with_degenerate(math.sqrt(n) * diff, history.std), n - 1


def t_statistic_double(h1: CentroidHistory, h2: CentroidHistory):
    """Per-axis pooled two-sample t, with df = n1 + n2 - 2."""
    n1, n2 = len(h1), len(h2)
    if n1 < 2 or n2 < 2:
        raise ValueError("two-sample test needs at least 2 samples per history")
    df = n1 + n2 - 2
    pooled = np.sqrt(((n1 - 1) * h1.std ** 2 + (n2 - 1) * h2.std ** 2) / df)
    scale = pooled * math.sqrt(1.0 / n1 + 1.0 / n2)
    return _t_with_degenerate(h1.mean - h2.mean, scale), df


def axis_alpha(alpha: float, family_wise: bool) -> float:
    """Per-axis level; Bonferroni over the three axes when ``family_wise``."""
    return alpha / 3.0 if family_wise else alpha


def single_sample_test(history: CentroidHistory, centroid, alpha: float,
                       predictive: bool = False, family_wise: bool = False):
    """(passes, max |t|) for the single-sample test on all three axes.

    With ``predictive`` the statistic is divided by sqrt(n + 1): the tested
    centroid is itself one noisy observation, so mean - c has variance
    sigma^2 (1 + 1/n) and only the rescaled value follows t(n - 1).
    """
    t, df = t_statistic_single(history, centroid)
    tmax = float(np.max(np.abs(t)))
    if predictive:
        tmax /= math.sqrt(len(history) + 1.0)
    return tmax <= t_critical(axis_alpha(alpha, family_wise), df), tmax


def double_sample_test(h1: CentroidHistory, h2: CentroidHistory, alpha: float,
                       family_wise: bool = False):
    t, df = t_statistic_double(h1, h2)
    tmax = float(np.max(np.abs(t)))
    return tmax <= t_critical(axis_alpha(alpha, family_wise), df), tmax


def shared_point_count(obs_ids, landmark_ids) -> int:
    """Number of map-point ids common to an observation and a landmark (both
    sorted int arrays)."""
    if len(obs_ids) == 0 or len(landmark_ids) == 0:
        return 0
    return int(np.count_nonzero(np.isin(obs_ids, landmark_ids, assume_unique=True)))


def associate_interframe(obs, candidates, prev_frame_assoc: dict, cfg: AssocConfig = AssocConfig()):
    """Landmark id for ``obs`` from consecutive-frame cues, or None.

    Among same-class candidates associated in the previous frame (keys of
    ``prev_frame_assoc``, mapping id to that frame's box), the best box IoU
    wins if it clears the threshold; IoU ties go to more shared points, then
    the lower id. Otherwise the same-class candidate sharing the most map
    points (at least the threshold) wins.
    """
    same = [lm for lm in candidates if lm.class_label == obs.class_label]
    if not same:
        return None
    obs_ids = np.asarray(obs.point_ids)
    shared = {lm.id: shared_point_count(obs_ids, lm.point_ids) for lm in same}
    best = None
    for lm in same:
        prev = prev_frame_assoc.get(lm.id)
        if prev is None:
            continue
        iou = bbox_iou(obs.bbox, prev)
        if iou <= cfg.iou_threshold:
            continue
        key = (-iou, -shared[lm.id], lm.id)
        if best is None or key < best:
            best = key
    if best is not None:
        return best[2]
    ranked = sorted((-shared[lm.id], lm.id) for lm in same if shared[lm.id] >= cfg.shared_point_threshold)
    return ranked[0][1] if ranked else None


def associate_isolated(obs_centroid, obs_class, landmarks, cfg: AssocConfig = AssocConfig()):
    """Landmark id accepted by the single-sample t-test with the smallest
    max-axis |t|, or None."""
    best = None
    for lm in landmarks:
        if lm.class_label != obs_class or len(lm.centroid_history) < cfg.min_history:
            continue
        ok, tmax = single_sample_test(lm.centroid_history, obs_centroid, cfg.significance_alpha,
                                      predictive=cfg.isolated_test == "predictive",
                                      family_wise=cfg.family_wise)
        if ok and (best is None or (tmax, lm.id) < best):
            best = (tmax, lm.id)
    return None if best is None else best[1]


def find_merge_pairs(landmarks, cfg: AssocConfig = AssocConfig()):
    """Pairs (survivor_id, absorbed_id) of duplicate landmarks.

    Every same-class pair passing the two-sample test is linked; linked
    groups collapse onto their lowest id.
    """
    eligible = sorted((lm for lm in landmarks if len(lm.centroid_history) >= cfg.min_history),
                      key=lambda lm: lm.id)
    parent = {lm.id: lm.id for lm in eligible}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, a in enumerate(eligible):
        for b in eligible[i + 1:]:
            if a.class_label != b.class_label:
                continue
            ok, _ = double_sample_test(a.centroid_history, b.centroid_history, cfg.significance_alpha,
                                       family_wise=cfg.family_wise)
            if ok:
                ra, rb = find(a.id), find(b.id)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    return sorted((find(i), i) for i in parent if find(i) != i)
