"""Superellipsoid geometry: parametric and implicit forms, radial distance,
surface sampling, rigid transforms and Monte-Carlo volumetric IoU."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

EPS_MIN = 0.1
EPS_MAX = 1.9


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class ShapeParams:
    """Shape exponents, clamped to [0.1, 1.9] on construction."""

    eps1: float = 1.0
    eps2: float = 1.0

    def __post_init__(self):
        for name in ("eps1", "eps2"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, min(max(v, EPS_MIN), EPS_MAX))


@dataclass(frozen=True)
class SizeParams:
    ax: float
    ay: float
    az: float

    def __post_init__(self):
        for name in ("ax", "ay", "az"):
            v = float(getattr(self, name))
            if not (v > 0.0 and math.isfinite(v)):
                raise ValueError(f"semi-axis {name} must be positive, got {v}")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.ax, self.ay, self.az])


@dataclass(frozen=True)
class ObjectPose:
    """Yaw-only rigid pose (pitch and roll are zero)."""

    yaw: float = 0.0
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        t = tuple(float(v) for v in self.translation)
        if len(t) != 3:
            raise ValueError("translation must have three components")
        object.__setattr__(self, "translation", t)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    @property
    def rotation(self) -> np.ndarray:
        return rot_z(self.yaw)


@dataclass(frozen=True)
class Superquadric:
    size: SizeParams
    shape: ShapeParams = field(default_factory=ShapeParams)
    pose: ObjectPose = field(default_factory=ObjectPose)

    @classmethod
    def from_params(cls, ax, ay, az, eps1=1.0, eps2=1.0, yaw=0.0, t=(0.0, 0.0, 0.0)):
        return cls(SizeParams(ax, ay, az), ShapeParams(eps1, eps2), ObjectPose(yaw, tuple(t)))

    @property
    def params(self) -> tuple:
        """The superquadric as (ax, ay, az, eps1, eps2, roll, pitch, yaw, tx, ty, tz);
        roll and pitch are always zero here."""
        s, e, p = self.size, self.shape, self.pose
        return (s.ax, s.ay, s.az, e.eps1, e.eps2, 0.0, 0.0, p.yaw, *p.translation)

    def to_dict(self) -> dict:
        return {
            "ax": self.size.ax,
            "ay": self.size.ay,
            "az": self.size.az,
            "eps1": self.shape.eps1,
            "eps2": self.shape.eps2,
            "yaw": self.pose.yaw,
            "t": list(self.pose.translation),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Superquadric":
        missing = [k for k in ("ax", "ay", "az", "eps1", "eps2", "yaw", "t") if k not in d]
        if missing:
            raise KeyError(f"superquadric missing field(s): {', '.join(missing)}")
        return cls.from_params(d["ax"], d["ay"], d["az"], d["eps1"], d["eps2"], d["yaw"], d["t"])

    def with_shape(self, eps1: float, eps2: float) -> "Superquadric":
        return Superquadric(self.size, ShapeParams(eps1, eps2), self.pose)

    def with_size(self, ax: float, ay: float, az: float) -> "Superquadric":
        return Superquadric(SizeParams(ax, ay, az), self.shape, self.pose)

    def _args(self):
        s, e = self.size, self.shape
        return s.ax, s.ay, s.az, e.eps1, e.eps2


@dataclass(frozen=True)
class SurfacePoint:
    eta: float
    omega: float
    position: tuple


def _spow(c, e):
    return np.sign(c) * np.abs(c) ** e


def parametric_point(sq: Superquadric, eta: float, omega: float) -> np.ndarray:
    """Surface point p(eta, omega) in the object frame, using sign-preserving powers."""
    ax, ay, az, e1, e2 = sq._args()
    ce = _spow(math.cos(eta), e1)
    return np.array([
        ax * ce * _spow(math.cos(omega), e2),
        ay * ce * _spow(math.sin(omega), e2),
        az * _spow(math.sin(eta), e1),
    ])


def _as_points(p) -> np.ndarray:
    return np.ascontiguousarray(np.atleast_2d(np.asarray(p, dtype=np.float64)))


def inside_outside(sq: Superquadric, p):
    """Implicit function F: < 1 inside, 1 on the surface, > 1 outside.

    Accepts a single 3-vector (returns a float) or an (N, 3) array.
    """
    pts = _as_points(p)
    f = kernels.inside_outside(pts, *sq._args())
    return float(f[0]) if np.ndim(p) == 1 else f


def radial_distance(sq: Superquadric, p):
    """Distance from p to the surface along the ray through the object centre.

    At the origin itself the ray is undefined; the smallest semi-axis is
    returned there, since every ray from the centre reaches the surface no
    sooner than that.
    """
    pts = _as_points(p)
    g = kernels.radial_distance(pts, *sq._args())
    return float(g[0]) if np.ndim(p) == 1 else g


def surface_grid(sq: Superquadric, n_eta: int, n_omega: int):
    """Uniform (eta, omega) grid: returns (eta, omega, points) with points of
    shape (n_eta * n_omega, 3), row-major in eta."""
    if n_eta < 2 or n_omega < 3:
        raise ValueError(f"grid too coarse: need n_eta >= 2 and n_omega >= 3, got {n_eta}x{n_omega}")
    ax, ay, az, e1, e2 = sq._args()
    eta = np.linspace(-math.pi / 2, math.pi / 2, n_eta)
    omega = np.linspace(-math.pi, math.pi, n_omega, endpoint=False)
    E, W = np.meshgrid(eta, omega, indexing="ij")
    ce = _spow(np.cos(E), e1)
    pts = np.stack([
        ax * ce * _spow(np.cos(W), e2),
        ay * ce * _spow(np.sin(W), e2),
        az * _spow(np.sin(E), e1),
    ], axis=-1).reshape(-1, 3)
    return E.ravel(), W.ravel(), pts


def sample_surface(sq: Superquadric, n_eta: int, n_omega: int) -> list:
    eta, omega, pts = surface_grid(sq, n_eta, n_omega)
    return [SurfacePoint(float(e), float(w), tuple(p)) for e, w, p in zip(eta, omega, pts)]


def surface_mesh(sq: Superquadric, n_eta: int = 16, n_omega: int = 32, world: bool = True):
    """Triangle mesh of the sampled surface grid: (vertices, faces)."""
    _, _, pts = surface_grid(sq, n_eta, n_omega)
    if world:
        pts = object_to_world(sq.pose, pts)
    faces = []
    for i in range(n_eta - 1):
        for j in range(n_omega):
            a = i * n_omega + j
            b = i * n_omega + (j + 1) % n_omega
            c = (i + 1) * n_omega + (j + 1) % n_omega
            d = (i + 1) * n_omega + j
            faces.append((a, b, c))
            faces.append((a, c, d))
    return pts, np.array(faces, dtype=np.int64)


def world_to_object(pose: ObjectPose, p_world):
    """R(yaw)^T (p - t); works on one point or an (N, 3) array."""
    p = np.asarray(p_world, dtype=np.float64)
    return (p - pose.t) @ pose.rotation


def object_to_world(pose: ObjectPose, p_obj):
    p = np.asarray(p_obj, dtype=np.float64)
    return p @ pose.rotation.T + pose.t


def world_aabb(sq: Superquadric):
    """Axis-aligned box containing the body: rotated corners of its local box."""
    a = sq.size.as_array()
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * a
    w = object_to_world(sq.pose, corners)
    return w.min(axis=0), w.max(axis=0)


def contains(sq: Superquadric, p_world) -> np.ndarray:
    """Mask of world points inside or on the body."""
    local = np.ascontiguousarray(world_to_object(sq.pose, _as_points(p_world)))
    return kernels.count_inside(local, *sq._args())


def iou_3d(a: Superquadric, b: Superquadric, n_samples: int = 100_000, seed: int = 0,
           chunk: int = 1 << 17) -> float:
    """Monte-Carlo volumetric IoU, sampling the union's axis-aligned box."""
    if n_samples < 10_000:
        raise ValueError(f"n_samples must be >= 1e4, got {n_samples}")
    lo_a, hi_a = world_aabb(a)
    lo_b, hi_b = world_aabb(b)
    if np.any(np.minimum(hi_a, hi_b) <= np.maximum(lo_a, lo_b)):
        return 0.0
    lo, hi = np.minimum(lo_a, lo_b), np.maximum(hi_a, hi_b)
    rng = np.random.default_rng(seed)
    inter = union = 0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        pts = lo + rng.random((m, 3)) * (hi - lo)
        ia = contains(a, pts)
        ib = contains(b, pts)
        inter += int(np.count_nonzero(ia & ib))
        union += int(np.count_nonzero(ia | ib))
        done += m
    return inter / union if union else 0.0
