"""Deterministic synthetic scenes for driving and validating the mapper.

Each object carries a fixed set of map points (noisy samples of its surface,
with stable ids) and a pool of background points in a shell around it. A
frame observes the camera-facing map points of every visible object, plus a
share of background points that fall inside the object's box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .camera import BBox, CameraFrame, Intrinsics, Segment2D, look_at, project_points
from .geometry import Superquadric, object_to_world, world_to_object
from .mapper import Mapper, Observation, PipelineConfig, evaluate

OUTLIER_ID_OFFSET = 10_000_000
IDS_PER_OBJECT = 100_000
MIN_VISIBLE_POINTS = 5
CUBOID_EPS = 0.3
SHELL_INNER_SCALE = 1.5  # inner shell radius / circumscribed radius

BOX_EDGES = [  # corner index pairs; corners indexed by (sx, sy, sz) bits
    (0, 1), (2, 3), (4, 5), (6, 7),  # along x
    (0, 2), (1, 3), (4, 6), (5, 7),  # along y
    (0, 4), (1, 5), (2, 6), (3, 7),  # along z
]


@dataclass(frozen=True)
class SceneObject:
    class_label: str
    sq: Superquadric


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple = ()
    seed: int = 0
    bounds: tuple = ((-2.0, -2.0, 0.0), (2.0, 2.0, 1.0))
    points_per_object: int = 300

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "bounds", tuple(tuple(float(v) for v in b) for b in self.bounds))
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        for i, o in enumerate(self.objects):
            t = o.sq.pose.t
            if np.any(t < lo) or np.any(t > hi):
                raise ValueError(f"object {i} centre {t.tolist()} lies outside the scene bounds")

    @property
    def truth(self) -> list:
        return [(o.class_label, o.sq) for o in self.objects]

    @property
    def centroid(self) -> np.ndarray:
        if not self.objects:
            lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
            return (lo + hi) / 2.0
        return np.mean([o.sq.pose.t for o in self.objects], axis=0)


@dataclass(frozen=True)
class NoiseSpec:
    point_sigma: float = 0.004
    bbox_sigma: float = 2.0
    segment_angle_sigma: float = 2.0  # degrees
    outlier_fraction: float = 0.1
    outlier_radius: float = 0.3
    detection_dropout: float = 0.05

    def __post_init__(self):
        for name in ("point_sigma", "bbox_sigma", "segment_angle_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.outlier_fraction <= 0.5:
            raise ValueError("outlier_fraction must lie in [0, 0.5]")
        if self.outlier_radius < 0:
            raise ValueError("outlier_radius must be non-negative")
        if not 0.0 <= self.detection_dropout <= 1.0:
            raise ValueError("detection_dropout must lie in [0, 1]")


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "orbit"
    n_frames: int = 200
    intrinsics: Intrinsics = field(default_factory=Intrinsics)
    radius: float = 2.2
    height: float = 1.2
    start: tuple = (2.0, 0.0, 1.2)
    end: tuple = (0.0, 2.0, 1.2)
    waypoints: tuple = ()

    def __post_init__(self):
        if self.kind not in ("orbit", "linear", "waypoints"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.kind == "waypoints" and len(self.waypoints) < 1:
            raise ValueError("waypoint trajectory needs at least one waypoint")


# -- surface sampling ------------------------------------------------------

def _spow(c, e):
    return np.sign(c) * np.abs(c) ** e


def _param_surface(sq: Superquadric, eta, omega):
    ax, ay, az, e1, e2 = sq._args()
    ce = _spow(np.cos(eta), e1)
    return np.stack([ax * ce * _spow(np.cos(omega), e2),
                     ay * ce * _spow(np.sin(omega), e2),
                     az * _spow(np.sin(eta), e1)], axis=-1)


def area_elements(sq: Superquadric, eta, omega, h: float = 1e-6) -> np.ndarray:
    """|dp/deta x dp/domega| by central differences of the parametric map."""
    e_lo, e_hi = eta - h, eta + h
    dp_de = (_param_surface(sq, e_hi, omega) - _param_surface(sq, e_lo, omega)) / (2 * h)
    dp_dw = (_param_surface(sq, eta, omega + h) - _param_surface(sq, eta, omega - h)) / (2 * h)
    return np.linalg.norm(np.cross(dp_de, dp_dw), axis=-1)


def sample_surface_random(sq: Superquadric, n: int, rng: np.random.Generator, oversample: int = 16):
    """Approximately area-uniform surface samples: returns (object-frame
    points, object-frame unit outward normals).

    Uniform (eta, omega) draws crowd the edges of boxy bodies, so a larger
    parametric draw is resampled with weights proportional to the area
    element.
    """
    m = max(n * oversample, n)
    eta = rng.uniform(-math.pi / 2, math.pi / 2, m)
    omega = rng.uniform(-math.pi, math.pi, m)
    w = area_elements(sq, eta, omega)
    w = np.where(np.isfinite(w), w, 0.0)
    idx = rng.choice(m, size=n, replace=False, p=w / w.sum())
    pts = _param_surface(sq, eta[idx], omega[idx])
    return pts, surface_normals(sq, pts)


def surface_normals(sq: Superquadric, pts_obj) -> np.ndarray:
    """Outward unit normals from central differences of the implicit function."""
    from .geometry import inside_outside

    h = 1e-6 * float(sq.size.as_array().min())
    grads = np.empty_like(pts_obj)
    for k in range(3):
        d = np.zeros(3)
        d[k] = h
        grads[:, k] = (inside_outside(sq, pts_obj + d) - inside_outside(sq, pts_obj - d)) / (2 * h)
    bad = ~np.all(np.isfinite(grads), axis=1) | (np.linalg.norm(grads, axis=1) == 0)
    grads[bad] = pts_obj[bad]
    return grads / np.linalg.norm(grads, axis=1, keepdims=True)


# -- persistent world state ---------------------------------------------------

@dataclass(frozen=True)
class ObjectWorld:
    ids: np.ndarray
    points: np.ndarray  # noisy world positions
    normals: np.ndarray  # world normals of the noiseless surface points
    outlier_ids: np.ndarray
    outlier_points: np.ndarray


@lru_cache(maxsize=32)
def build_world(scene: SceneSpec, point_sigma: float, outlier_radius: float):
    """Map points and background pools for every object, from ``scene.seed``."""
    worlds = []
    for i, obj in enumerate(scene.objects):
        rng = np.random.default_rng([scene.seed, i, 0x5EED])
        n = scene.points_per_object
        p_obj, n_obj = sample_surface_random(obj.sq, n, rng)
        pts = object_to_world(obj.sq.pose, p_obj) + rng.normal(0.0, point_sigma, (n, 3))
        nrm = n_obj @ obj.sq.pose.rotation.T
        # background shell well outside the circumscribed sphere of the bounding box
        r_in = SHELL_INNER_SCALE * float(np.linalg.norm(obj.sq.size.as_array()))
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = r_in + 1e-3 + rng.random(n) * outlier_radius
        out = obj.sq.pose.t + d * r[:, None]
        worlds.append(ObjectWorld(
            ids=np.arange(n, dtype=np.int64) + i * IDS_PER_OBJECT,
            points=pts, normals=nrm,
            outlier_ids=np.arange(n, dtype=np.int64) + i * IDS_PER_OBJECT + OUTLIER_ID_OFFSET,
            outlier_points=out,
        ))
    return tuple(worlds)


# -- trajectories ----------------------------------------------------------

def generate_trajectory(spec: TrajectorySpec, scene: SceneSpec) -> list:
    """Camera frames looking at the scene centroid."""
    c = scene.centroid
    if spec.kind == "orbit":
        eyes = [c + np.array([spec.radius * math.cos(a), spec.radius * math.sin(a), 0.0])
                + np.array([0.0, 0.0, spec.height - c[2]])
                for a in 2 * math.pi * np.arange(spec.n_frames) / spec.n_frames]
    elif spec.kind == "linear":
        s = np.linspace(0.0, 1.0, spec.n_frames) if spec.n_frames > 1 else np.zeros(1)
        a, b = np.asarray(spec.start, float), np.asarray(spec.end, float)
        eyes = [a + (b - a) * u for u in s]
    else:
        wp = np.asarray(spec.waypoints, dtype=float).reshape(-1, 3)
        if len(wp) == 1:
            eyes = [wp[0]] * spec.n_frames
        else:
            seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            s = np.linspace(0.0, cum[-1], spec.n_frames)
            eyes = [np.array([np.interp(u, cum, wp[:, k]) for k in range(3)]) for u in s]
    return [CameraFrame(i, look_at(e, c), e, spec.intrinsics) for i, e in enumerate(eyes)]


def sweep_trajectory(scene: SceneSpec, n_frames: int, n_sweeps: int = 3, arc_deg: float = 90.0,
                     radius: float = 2.2, height: float = 1.2, start_deg: float = 0.0,
                     intrinsics: Intrinsics = Intrinsics()) -> TrajectorySpec:
    """Waypoint trajectory sweeping back and forth over one arc of the orbit
    circle, so that every sweep revisits the same viewpoints."""
    c = scene.centroid
    arc = np.radians(start_deg + np.linspace(0.0, arc_deg, 16))
    fwd = [(c[0] + radius * math.cos(a), c[1] + radius * math.sin(a), height) for a in arc]
    pts = list(fwd)
    for k in range(1, n_sweeps):
        seg = fwd[::-1] if k % 2 else fwd
        pts.extend(seg[1:])
    return TrajectorySpec(kind="waypoints", n_frames=n_frames, intrinsics=intrinsics,
                          waypoints=tuple(pts))


# -- observations ------------------------------------------------------------

def is_cuboid(sq: Superquadric) -> bool:
    return sq.shape.eps1 <= CUBOID_EPS and sq.shape.eps2 <= CUBOID_EPS


def box_edge_segments(sq: Superquadric, frame: CameraFrame, angle_sigma_deg: float = 0.0,
                      rng: np.random.Generator | None = None) -> list:
    """Image segments of the visible edges of the object's bounding box.

    An edge is visible when one of its two adjacent faces faces the camera.
    Each segment is rotated about its midpoint by N(0, sigma^2) degrees.
    """
    a = sq.size.as_array()
    bits = np.array([[(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])
    corners_obj = (2 * bits - 1) * a
    corners = object_to_world(sq.pose, corners_obj)
    cam_obj = world_to_object(sq.pose, frame.center)
    faces_visible = {}
    for k in range(3):
        faces_visible[(k, 1)] = cam_obj[k] > a[k]
        faces_visible[(k, 0)] = cam_obj[k] < -a[k]
    uv, ok = project_points(frame, corners)
    segs = []
    for i, j in BOX_EDGES:
        if not (ok[i] and ok[j]):
            continue
        axis = int(np.flatnonzero(bits[i] != bits[j])[0])
        others = [k for k in range(3) if k != axis]
        if not any(faces_visible[(k, int(bits[i][k]))] for k in others):
            continue
        p, q = uv[i], uv[j]
        if np.hypot(*(q - p)) < 2.0:
            continue
        if angle_sigma_deg > 0 and rng is not None:
            ang = math.radians(rng.normal(0.0, angle_sigma_deg))
            m = (p + q) / 2
            c, s = math.cos(ang), math.sin(ang)
            R = np.array([[c, -s], [s, c]])
            p, q = m + R @ (p - m), m + R @ (q - m)
        segs.append(Segment2D(tuple(p), tuple(q)))
    return segs


def frame_rng(scene: SceneSpec, frame_id: int) -> np.random.Generator:
    return np.random.default_rng([scene.seed, int(frame_id), 0xF4A3E])


def observe_frame(scene: SceneSpec, frame: CameraFrame, noise: NoiseSpec,
                  rng: np.random.Generator | None = None) -> list:
    """Noisy detections of every visible object in one frame."""
    if rng is None:
        rng = frame_rng(scene, frame.frame_id)
    worlds = build_world(scene, noise.point_sigma, noise.outlier_radius)
    intr = frame.intrinsics
    out = []
    for i, (obj, w) in enumerate(zip(scene.objects, worlds)):
        uv, front = project_points(frame, w.points)
        facing = np.einsum("ij,ij->i", w.normals, frame.center - w.points) > 0.0
        in_img = (uv[:, 0] >= 0) & (uv[:, 0] <= intr.width - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= intr.height - 1)
        vis = front & facing & in_img
        # draws below happen for every object so the stream layout is fixed
        bbox_noise = rng.normal(0.0, noise.bbox_sigma, 4) if noise.bbox_sigma > 0 else np.zeros(4)
        dropped = rng.random() < noise.detection_dropout
        sub = np.random.default_rng(rng.integers(2 ** 63))
        if np.count_nonzero(vis) < MIN_VISIBLE_POINTS or dropped:
            continue
        puv = uv[vis]
        lo, hi = puv.min(axis=0), puv.max(axis=0)
        raw = np.array([lo[0], lo[1], hi[0], hi[1]]) + bbox_noise
        if raw[0] >= raw[2] or raw[1] >= raw[3]:
            continue
        bbox = BBox(*raw).clipped(intr)
        if bbox is None:
            continue
        ids, pts = w.ids[vis], w.points[vis]
        is_out = np.zeros(len(ids), dtype=bool)
        k = int(round(noise.outlier_fraction * len(ids)))
        if k > 0:
            ouv, ofront = project_points(frame, w.outlier_points)
            cand = np.flatnonzero(ofront & (ouv[:, 0] >= bbox.xmin) & (ouv[:, 0] <= bbox.xmax)
                                  & (ouv[:, 1] >= bbox.ymin) & (ouv[:, 1] <= bbox.ymax))
            if len(cand) > k:
                cand = np.sort(sub.choice(cand, size=k, replace=False))
            ids = np.concatenate([ids, w.outlier_ids[cand]])
            pts = np.concatenate([pts, w.outlier_points[cand]])
            is_out = np.concatenate([is_out, np.ones(len(cand), dtype=bool)])
        segs = []
        if is_cuboid(obj.sq):
            segs = box_edge_segments(obj.sq, frame, noise.segment_angle_sigma, sub)
        out.append(Observation(frame.frame_id, obj.class_label, bbox, pts, ids, segs,
                               is_outlier=is_out, truth_index=i))
    return out


# -- scenarios --------------------------------------------------------------

def benchmark_scene(seed: int = 0) -> SceneSpec:
    """Five well-separated tabletop objects: two boxes, an ellipsoid, a
    cylinder-like body and a flat elongated box."""
    def obj(label, a, eps, yaw_deg, xy):
        return SceneObject(label, Superquadric.from_params(
            *a, *eps, math.radians(yaw_deg), (xy[0], xy[1], a[2])))
    objs = (
        obj("box", (0.20, 0.15, 0.12), (0.1, 0.1), 20.0, (-0.70, -0.55)),
        obj("box", (0.15, 0.15, 0.15), (0.1, 0.1), -30.0, (0.70, 0.60)),
        obj("bowl", (0.16, 0.11, 0.10), (1.0, 1.0), 40.0, (0.75, -0.60)),
        obj("cup", (0.09, 0.09, 0.13), (0.1, 1.0), 0.0, (-0.70, 0.65)),
        obj("book", (0.24, 0.12, 0.05), (0.1, 0.1), -15.0, (0.0, 0.0)),
    )
    return SceneSpec(objs, seed=seed)


@dataclass
class ScenarioResult:
    map: object
    evaluation: object
    reports: list

    @property
    def front_times(self) -> np.ndarray:
        return np.array([r.front_time_s for r in self.reports])


def run_scenario(scene: SceneSpec, trajectory: TrajectorySpec, noise: NoiseSpec,
                 cfg: PipelineConfig = PipelineConfig(), eval_samples: int = 100_000,
                 eval_seed: int = 0, duplicate_window: tuple | None = None,
                 backend: str = "inline") -> ScenarioResult:
    """Run the mapper over a generated sequence, finalize and evaluate.

    ``duplicate_window=(start, stop)`` hides all landmarks that exist before
    frame ``start`` from association until frame ``stop``, which forces
    duplicate landmarks for the merge logic to clean up.
    """
    frames = generate_trajectory(trajectory, scene)
    mapper = Mapper(cfg, backend=backend)
    try:
        allowed = None
        for frame in frames:
            obs = observe_frame(scene, frame, noise)
            if duplicate_window is not None:
                start, stop = duplicate_window
                if frame.frame_id == start:
                    allowed = set()
                elif frame.frame_id == stop:
                    allowed = None
            mapper.process_frame(frame, obs, associate_with=allowed)
        omap = mapper.finalize()
    finally:
        mapper.close()
    report = evaluate(omap, scene.truth, eval_samples, eval_seed)
    return ScenarioResult(omap, report, mapper.reports)
