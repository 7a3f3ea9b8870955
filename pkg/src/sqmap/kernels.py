"""Select the compiled kernel module, falling back to pure Python.

Set ``SQMAP_PURE_PYTHON=1`` to force the fallback (used by the equivalence
tests and the benchmark).
"""
import os

from . import _kernels_py

if os.environ.get("SQMAP_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

IMPLEMENTATION = _impl.IMPLEMENTATION

c_factor = _impl.c_factor
inside_outside = _impl.inside_outside
radial_scale = _impl.radial_scale
radial_distance = _impl.radial_distance
grid_costs = _impl.grid_costs
count_inside = _impl.count_inside
build_forest = _impl.build_forest
mean_path_length = _impl.mean_path_length
self_path_length = _impl.self_path_length


def compiled_available():
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
