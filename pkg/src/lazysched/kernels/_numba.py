"""numba-compiled versions of the scalar-loop kernels."""

from numba import njit

from . import _loops

_jit = njit(cache=True, nogil=True)

clamped_step = _jit(_loops.clamped_step)
water_bounds = _jit(_loops.water_bounds)
water_map = _jit(_loops.water_map)
fixed_point = _jit(_loops.fixed_point)
estimated_bounds = _jit(_loops.estimated_bounds)
lazy_backward = _jit(_loops.lazy_backward)
offline_schedule = _jit(_loops.offline_schedule)
online_heuristic = _jit(_loops.online_heuristic)
