"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``LAZYSCHED_DISABLE_NUMBA=1`` to force the numpy path.  The active
backend is reported by ``BACKEND``.
"""

import os

from . import _numpy

_disabled = os.environ.get("LAZYSCHED_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

_impl = _numpy
BACKEND = "numpy"
if not _disabled:
    try:
        from . import _numba as _impl  # noqa: F811
        BACKEND = "numba"
    except ImportError:
        pass

lazy_backward = _impl.lazy_backward
water_bounds = _impl.water_bounds
water_map = _impl.water_map
fixed_point = _impl.fixed_point
offline_schedule = _impl.offline_schedule
estimated_bounds = _impl.estimated_bounds
online_heuristic = _impl.online_heuristic
clamped_step = _impl.clamped_step

numpy_backend = _numpy

__all__ = [
    "BACKEND",
    "numpy_backend",
    "lazy_backward",
    "water_bounds",
    "water_map",
    "fixed_point",
    "offline_schedule",
    "estimated_bounds",
    "online_heuristic",
    "clamped_step",
]
