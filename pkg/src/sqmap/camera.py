"""Pinhole camera, frame poses and projection of points and segments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BEHIND_DEPTH = 1e-6
MIN_SEGMENT_PX = 2.0


@dataclass(frozen=True)
class Intrinsics:
    fx: float = 525.0
    fy: float = 525.0
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480

    def __post_init__(self):
        for name in ("fx", "fy"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.cx < self.width:
            raise ValueError("cx must lie inside the image width")
        if not 0 < self.cy < self.height:
            raise ValueError("cy must lie inside the image height")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True, eq=False)
class CameraFrame:
    """Camera-to-world pose: p_world = rotation @ p_cam + translation."""

    frame_id: int
    rotation: np.ndarray
    translation: np.ndarray
    intrinsics: Intrinsics = field(default_factory=Intrinsics)

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def to_camera(self, p_world) -> np.ndarray:
        return (np.asarray(p_world, dtype=np.float64) - self.translation) @ self.rotation


@dataclass(frozen=True)
class BBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"degenerate bbox {self}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def clipped(self, intr: Intrinsics) -> "BBox | None":
        x0, y0 = max(self.xmin, 0.0), max(self.ymin, 0.0)
        x1, y1 = min(self.xmax, intr.width - 1.0), min(self.ymax, intr.height - 1.0)
        if x0 >= x1 or y0 >= y1:
            return None
        return BBox(x0, y0, x1, y1)

    def to_list(self) -> list:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


@dataclass(frozen=True)
class Segment2D:
    p: tuple
    q: tuple

    def __post_init__(self):
        p = (float(self.p[0]), float(self.p[1]))
        q = (float(self.q[0]), float(self.q[1]))
        if p == q:
            raise ValueError("segment endpoints must be distinct")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def direction(self) -> np.ndarray:
        return np.subtract(self.q, self.p)

    @property
    def length(self) -> float:
        return float(np.hypot(*self.direction))

    @property
    def midpoint(self) -> np.ndarray:
        return (np.asarray(self.p) + np.asarray(self.q)) / 2.0

    @property
    def angle(self) -> float:
        """Undirected line angle in [0, pi)."""
        dx, dy = self.direction
        return math.atan2(dy, dx) % math.pi

    @property
    def vertical(self) -> bool:
        return self.p[0] == self.q[0]

    @property
    def slope(self) -> float:
        dx, dy = self.direction
        return math.inf if dx == 0 else dy / dx


def project_points(frame: CameraFrame, pts_world):
    """Vectorised projection: returns (uv, in_front) for an (N, 3) array."""
    pc = frame.to_camera(np.atleast_2d(pts_world))
    z = pc[:, 2]
    in_front = z > BEHIND_DEPTH
    zs = np.where(in_front, z, 1.0)
    k = frame.intrinsics
    uv = np.stack([k.fx * pc[:, 0] / zs + k.cx, k.fy * pc[:, 1] / zs + k.cy], axis=1)
    return uv, in_front


def project_point(frame: CameraFrame, p_world):
    """Pixel coordinates of a world point, or None when it is behind the camera."""
    uv, ok = project_points(frame, np.asarray(p_world, dtype=np.float64).reshape(1, 3))
    return uv[0] if ok[0] else None


def project_segment(frame: CameraFrame, a_world, b_world):
    """Project a 3D segment; None if an endpoint is behind the camera or the
    image segment is shorter than two pixels."""
    a = project_point(frame, a_world)
    b = project_point(frame, b_world)
    if a is None or b is None or np.hypot(*(b - a)) < MIN_SEGMENT_PX:
        return None
    return Segment2D(tuple(a), tuple(b))


def bbox_contains(b: BBox, px) -> bool:
    return bool(b.xmin <= px[0] <= b.xmax and b.ymin <= px[1] <= b.ymax)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world rotation for a camera at ``eye`` looking at ``target``
    (x right, y down, z forward)."""
    z = np.asarray(target, dtype=float) - np.asarray(eye, dtype=float)
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, (0.0, 1.0, 0.0))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])
