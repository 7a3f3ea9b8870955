"""Superquadric object mapping from sparse, noisy observations."""

from .geometry import ObjectPose, ShapeParams, SizeParams, Superquadric, iou_3d
from .kernels import IMPLEMENTATION as KERNEL_IMPLEMENTATION

__all__ = [
    "KERNEL_IMPLEMENTATION",
    "ObjectPose",
    "ShapeParams",
    "SizeParams",
    "Superquadric",
    "iou_3d",
]
__version__ = "0.1.0"
