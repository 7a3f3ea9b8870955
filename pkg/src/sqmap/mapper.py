"""Landmark lifecycle: association, filtering, pose tracking, shape refits and
merges, plus map evaluation against ground truth.

The front stage (``Mapper.process_frame``) runs in frame order and is the
only code that mutates landmarks. Back-stage work (shape refits and merge
detection) runs on snapshots, either inline after the front stage or on a
worker thread, and its results are applied at the start of the next frame.
Both modes therefore produce identical maps.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .association import (AssocConfig, CentroidHistory, associate_interframe, associate_isolated,
                          find_merge_pairs)
from .camera import BBox, CameraFrame
from .geometry import ObjectPose, Superquadric, iou_3d
from .outliers import EifConfig, filter_outliers, reprojection_filter
from .pose import (YawHistory, centroid_translation, combine_yaw, estimate_yaw_lines,
                   estimate_yaw_pca, normalize_yaw_singularity, update_yaw)
from .shape import FitConfig, FitError, fit_landmark

log = logging.getLogger(__name__)


@dataclass
class Observation:
    """One detection: box, class, the map points inside it and edge segments.

    ``is_outlier`` and ``truth_index`` are simulator metadata and are never
    read by the pipeline.
    """

    frame_id: int
    class_label: str
    bbox: BBox
    points_world: np.ndarray
    point_ids: np.ndarray
    segments: list = field(default_factory=list)
    is_outlier: np.ndarray | None = None
    truth_index: int | None = None

    @property
    def centroid(self) -> np.ndarray:
        return self.points_world.mean(axis=0)


@dataclass(frozen=True)
class PipelineConfig:
    eif: EifConfig = EifConfig()
    fit: FitConfig = FitConfig()
    assoc: AssocConfig = AssocConfig()
    refit_interval: int = 5
    merge_interval: int = 20
    min_points_for_fit: int = 20
    min_points_new_landmark: int = 5
    recenter_on_extent: bool = True
    yaw_method_overrides: tuple = ()  # ((class_label, "line" | "pca"), ...)
    seed: int = 0

    def __post_init__(self):
        if self.refit_interval < 1 or self.merge_interval < 1:
            raise ValueError("refit_interval and merge_interval must be >= 1")
        if self.min_points_for_fit < 8:
            raise ValueError("min_points_for_fit must be >= 8")

    def yaw_method_for(self, label: str) -> str | None:
        return dict(self.yaw_method_overrides).get(label)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["yaw_method_overrides"] = dict(self.yaw_method_overrides)
        return d


class ObjectLandmark:
    def __init__(self, id: int, class_label: str):
        self.id = id
        self.class_label = class_label
        self.point_ids = np.empty(0, dtype=np.int64)
        self.points = np.empty((0, 3))
        self.centroid_history = CentroidHistory()
        self.yaw_history = YawHistory()
        self.translation = np.zeros(3)
        self.model: Superquadric | None = None
        self.last_assoc_frame: int | None = None
        self.last_bbox: BBox | None = None
        self.n_observations = 0
        self.dirty = False  # cloud changed since the last refit submission

    @property
    def yaw(self) -> float:
        return self.yaw_history.yaw_running

    @property
    def pose(self) -> ObjectPose:
        return ObjectPose(self.yaw, tuple(self.translation))

    def add_points(self, ids, pts):
        """Union the cloud with (ids, pts); re-observed ids take the new position."""
        ids = np.asarray(ids, dtype=np.int64)
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        if len(ids) == 0:
            return
        all_ids = np.concatenate([ids, self.point_ids])
        all_pts = np.concatenate([pts, self.points])
        uniq, first = np.unique(all_ids, return_index=True)
        self.point_ids = uniq
        self.points = all_pts[first]

    def keep(self, mask):
        self.point_ids = self.point_ids[mask]
        self.points = self.points[mask]

    def snapshot(self) -> dict:
        return {"id": self.id, "points": self.points.copy(), "pose": self.pose}


class ObjectMap:
    def __init__(self, config: PipelineConfig | None = None):
        self.landmarks: dict[int, ObjectLandmark] = {}
        self.frame_count = 0
        self.config = config
        self.next_id = 0
        self.last_frame_id: int | None = None

    def __len__(self):
        return len(self.landmarks)

    def sorted_landmarks(self):
        return [self.landmarks[k] for k in sorted(self.landmarks)]

    def to_dict(self) -> dict:
        out = []
        for lm in self.sorted_landmarks():
            d = {"id": lm.id, "class": lm.class_label}
            d.update(lm.model.to_dict() if lm.model is not None else {"model": None})
            d["n_points"] = int(len(lm.point_ids))
            d["n_observations"] = int(lm.n_observations)
            out.append(d)
        return {"format_version": 1, "frame_count": self.frame_count, "landmarks": out}


@dataclass
class FrameReport:
    frame_id: int
    associations: list = field(default_factory=list)  # (obs index, landmark id, cue)
    created: list = field(default_factory=list)
    merged: list = field(default_factory=list)  # (survivor, absorbed)
    removed_reprojection: int = 0
    removed_eif: int = 0
    front_time_s: float = 0.0


def _refit_job(snap: dict, cfg: PipelineConfig):
    try:
        model = fit_landmark(snap["points"], snap["pose"], cfg.fit, recenter=cfg.recenter_on_extent)
    except FitError as exc:
        log.debug("refit of landmark %d failed: %s", snap["id"], exc)
        model = None
    return snap["id"], model


class _MergeView:
    """Minimal landmark stand-in for merge detection on snapshots."""

    def __init__(self, lm: ObjectLandmark):
        self.id = lm.id
        self.class_label = lm.class_label
        self.centroid_history = lm.centroid_history.copy()


def _merge_job(views, cfg: PipelineConfig):
    return find_merge_pairs(views, cfg.assoc)


class Mapper:
    """Incremental object mapper.

    ``backend="inline"`` runs back-stage jobs on the calling thread after the
    front stage of each frame; ``backend="thread"`` uses one worker thread.
    """

    def __init__(self, cfg: PipelineConfig = PipelineConfig(), backend: str = "inline"):
        if backend not in ("inline", "thread"):
            raise ValueError(f"unknown backend {backend!r}")
        self.cfg = cfg
        self.map = ObjectMap(cfg)
        self._executor = ThreadPoolExecutor(max_workers=1) if backend == "thread" else None
        self._queued = []  # inline jobs waiting to run
        self._pending: list[tuple[str, Future | tuple]] = []
        self._frames_processed = 0
        self.reports: list[FrameReport] = []

    # -- back stage -----------------------------------------------------
    def _submit(self, kind, fn, *args):
        if self._executor is None:
            self._queued.append((kind, fn, args))
        else:
            self._pending.append((kind, self._executor.submit(fn, *args)))

    def _run_queued(self):
        for kind, fn, args in self._queued:
            self._pending.append((kind, fn(*args)))
        self._queued = []

    def _apply_pending(self, report: FrameReport | None, associate_with: set | None = None):
        self._run_queued()
        pending, self._pending = self._pending, []
        for kind, item in pending:
            result = item.result() if isinstance(item, Future) else item
            if kind == "refit":
                lid, model = result
                lm = self.map.landmarks.get(lid)
                if lm is not None and model is not None:
                    lm.model = model
            elif kind == "merge":
                for survivor, absorbed in result:
                    if survivor in self.map.landmarks and absorbed in self.map.landmarks:
                        self._merge(survivor, absorbed)
                        if associate_with is not None and absorbed in associate_with:
                            associate_with.add(survivor)
                        if report is not None:
                            report.merged.append((survivor, absorbed))

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    # -- landmark operations ------------------------------------------
    def _eif_cfg(self, frame_id: int, lid: int) -> EifConfig:
        seed = (self.cfg.seed * 1_000_003 + frame_id * 7919 + lid) % (2 ** 32)
        return replace(self.cfg.eif, seed=seed)

    def _eif_pass(self, lm: ObjectLandmark, frame_id: int) -> int:
        res = filter_outliers(lm.points, self._eif_cfg(frame_id, lm.id))
        if not res.skipped:
            lm.keep(res.kept)
        return res.n_removed

    def _update_pose(self, lm: ObjectLandmark, frame: CameraFrame | None, segments):
        if len(lm.points) == 0:
            return
        lm.translation = centroid_translation(lm.points)
        method = self.cfg.yaw_method_for(lm.class_label)
        est = None
        if frame is not None and method != "pca" and segments:
            est = estimate_yaw_lines(lm.translation, segments, frame)
            if not est.ok:
                est = None
        if est is None and method != "line":
            est = estimate_yaw_pca(lm.points)
            if not est.ok:
                est = None
        if est is not None:
            yaw, _ = normalize_yaw_singularity(est.yaw)
            lm.yaw_history = update_yaw(lm.yaw_history, yaw)

    def _new_landmark(self, label: str) -> ObjectLandmark:
        lm = ObjectLandmark(self.map.next_id, label)
        self.map.next_id += 1
        self.map.landmarks[lm.id] = lm
        return lm

    def _refit_now(self, lm: ObjectLandmark):
        if len(lm.points) >= self.cfg.min_points_for_fit:
            _, model = _refit_job(lm.snapshot(), self.cfg)
            if model is not None:
                lm.model = model

    def _merge(self, survivor_id: int, absorbed_id: int):
        keep = self.map.landmarks[survivor_id]
        gone = self.map.landmarks.pop(absorbed_id)
        keep.add_points(gone.point_ids, gone.points)
        keep.centroid_history.extend(gone.centroid_history)
        keep.yaw_history = combine_yaw(keep.yaw_history, gone.yaw_history)
        keep.n_observations += gone.n_observations
        if gone.last_assoc_frame is not None and (keep.last_assoc_frame is None
                                                 or gone.last_assoc_frame > keep.last_assoc_frame):
            keep.last_assoc_frame, keep.last_bbox = gone.last_assoc_frame, gone.last_bbox
        self._eif_pass(keep, self.map.frame_count)
        if len(keep.points):
            keep.translation = centroid_translation(keep.points)
        self._refit_now(keep)

    # -- front stage ----------------------------------------------------
    def process_frame(self, frame: CameraFrame, observations, associate_with=None) -> FrameReport:
        """Consume one frame of observations.

        ``associate_with`` optionally restricts which existing landmark ids
        may receive observations (used to inject duplicates in tests).
        """
        if self.map.last_frame_id is not None and frame.frame_id <= self.map.last_frame_id:
            raise ValueError(f"frame id {frame.frame_id} is not after {self.map.last_frame_id}")
        report = FrameReport(frame.frame_id)
        t0 = time.perf_counter()
        self._apply_pending(report, associate_with)
        prev = self.map.last_frame_id
        prev_assoc = {lm.id: lm.last_bbox for lm in self.map.landmarks.values()
                      if prev is not None and lm.last_assoc_frame == prev}
        claimed: set[int] = set()
        for k, obs in enumerate(observations):
            if len(obs.point_ids) == 0:
                continue
            pool = [lm for lm in self.map.sorted_landmarks()
                    if lm.id not in claimed and (associate_with is None or lm.id in associate_with)]
            lid = associate_interframe(obs, pool, prev_assoc, self.cfg.assoc)
            cue = "interframe"
            if lid is None:
                lid = associate_isolated(obs.centroid, obs.class_label, pool, self.cfg.assoc)
                cue = "isolated"
            if lid is None:
                if len(obs.point_ids) < self.cfg.min_points_new_landmark:
                    continue
                lm = self._new_landmark(obs.class_label)
                report.created.append(lm.id)
                cue = "new"
            else:
                lm = self.map.landmarks[lid]
            claimed.add(lm.id)
            report.associations.append((k, lm.id, cue))
            self._integrate(lm, obs, frame, report)
            if associate_with is not None and cue == "new":
                associate_with.add(lm.id)

        self.map.last_frame_id = frame.frame_id
        self.map.frame_count += 1
        self._frames_processed += 1
        self._schedule_back_stage()
        report.front_time_s = time.perf_counter() - t0
        if self._executor is None:
            self._run_queued()
        self.reports.append(report)
        return report

    def _integrate(self, lm: ObjectLandmark, obs: Observation, frame: CameraFrame, report: FrameReport):
        lm.add_points(obs.point_ids, obs.points_world)
        mask = reprojection_filter(lm.points, frame, obs.bbox)
        if len(mask) - np.count_nonzero(mask) > len(mask) // 2:
            # safety cap: never drop more than half the cloud on one box
            mask[:] = True
        report.removed_reprojection += int(len(mask) - np.count_nonzero(mask))
        lm.keep(mask)
        report.removed_eif += self._eif_pass(lm, frame.frame_id)
        lm.centroid_history.append(obs.centroid)
        lm.n_observations += 1
        lm.last_assoc_frame = frame.frame_id
        lm.last_bbox = obs.bbox
        lm.dirty = True
        self._update_pose(lm, frame, obs.segments)

    def _schedule_back_stage(self):
        n = self._frames_processed
        if n % self.cfg.refit_interval == 0:
            for lm in self.map.sorted_landmarks():
                if lm.dirty and len(lm.points) >= self.cfg.min_points_for_fit:
                    lm.dirty = False
                    self._submit("refit", _refit_job, lm.snapshot(), self.cfg)
        if n % self.cfg.merge_interval == 0:
            views = [_MergeView(lm) for lm in self.map.sorted_landmarks()]
            self._submit("merge", _merge_job, views, self.cfg)

    def finalize(self) -> ObjectMap:
        """Flush back-stage work, then filter, refit and merge until no
        duplicate pair remains."""
        self._apply_pending(None)
        for lm in self.map.sorted_landmarks():
            self._eif_pass(lm, self.map.frame_count)
            if len(lm.points):
                lm.translation = centroid_translation(lm.points)
            self._refit_now(lm)
        while True:
            pairs = find_merge_pairs(self.map.sorted_landmarks(), self.cfg.assoc)
            if not pairs:
                break
            for survivor, absorbed in pairs:
                if survivor in self.map.landmarks and absorbed in self.map.landmarks:
                    self._merge(survivor, absorbed)
        return self.map


# -- evaluation ---------------------------------------------------------

@dataclass
class EvaluationReport:
    matches: list  # (landmark id, truth index, iou)
    unmatched_truth: list
    unmatched_landmarks: list
    landmark_count: int
    truth_count: int

    @property
    def mean_iou(self) -> float:
        if self.truth_count == 0:
            return 0.0
        return float(sum(m[2] for m in self.matches) / self.truth_count)

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "mean_iou": self.mean_iou,
            "landmark_count": self.landmark_count,
            "truth_count": self.truth_count,
            "matches": [{"object_id": a, "truth_id": b, "iou3d": c} for a, b, c in self.matches],
            "unmatched_truth": list(self.unmatched_truth),
            "unmatched_landmarks": list(self.unmatched_landmarks),
        }

    def csv_rows(self):
        rows = [(a, b, c) for a, b, c in self.matches]
        rows += [(a, "", 0.0) for a in self.unmatched_landmarks]
        rows += [("", b, 0.0) for b in self.unmatched_truth]
        return rows


def evaluate(landmarks, truth, n_samples: int = 100_000, seed: int = 0) -> EvaluationReport:
    """Greedy one-to-one matching of landmarks to truth objects by descending
    3D IoU (same class only). ``landmarks`` is an ObjectMap or a list of
    (id, class, Superquadric | None); ``truth`` is a list of (class, Superquadric).
    Mean IoU averages over truth objects, counting unmatched ones as 0.
    """
    if isinstance(landmarks, ObjectMap):
        items = [(lm.id, lm.class_label, lm.model) for lm in landmarks.sorted_landmarks()]
    else:
        items = list(landmarks)
    pairs = []
    for lid, label, model in items:
        if model is None:
            continue
        for ti, (tlabel, tsq) in enumerate(truth):
            if tlabel != label:
                continue
            iou = iou_3d(model, tsq, n_samples, seed)
            if iou > 0.0:
                pairs.append((iou, lid, ti))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    used_l, used_t, matches = set(), set(), []
    for iou, lid, ti in pairs:
        if lid in used_l or ti in used_t:
            continue
        used_l.add(lid)
        used_t.add(ti)
        matches.append((lid, ti, iou))
    matches.sort()
    return EvaluationReport(
        matches=matches,
        unmatched_truth=[i for i in range(len(truth)) if i not in used_t],
        unmatched_landmarks=[lid for lid, _, _ in items if lid not in used_l],
        landmark_count=len(items),
        truth_count=len(truth),
    )
