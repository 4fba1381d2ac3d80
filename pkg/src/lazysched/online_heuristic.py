"""Online water-level heuristic driven only by running means of observed history.

At slot n the controller knows its battery, backlog, the current gain and
the past; it estimates the offline bounds from running means, runs a few
fixed-point steps, smooths the result and spends ``(v - 1/gamma)_+``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .core import Realization, RunMetrics, SystemConfig
from .waterfill_offline import ENERGY_SLOT, ScheduleEntry, entries_from_arrays, metrics_from_arrays

__all__ = [
    "EstimatorState",
    "HeuristicDecision",
    "update_estimators",
    "estimated_bounds",
    "heuristic_power",
    "online_arrays",
    "online_schedule",
]


@dataclass(frozen=True)
class EstimatorState:
    """Observed history through slot ``slot``.

    ``inv_gains`` keeps every observed 1/gamma so the averaged M terms can be
    evaluated at any level.  ``v_prev`` is the last smoothed level (None
    before the first decision).
    """

    slot: int = 0
    h_sum: float = 0.0
    b_sum: float = 0.0
    inv_gains: tuple[float, ...] = ()
    v_prev: float | None = None

    @property
    def h_mean(self) -> float:
        return self.h_sum / self.slot if self.slot else 0.0

    @property
    def b_mean(self) -> float:
        return self.b_sum / self.slot if self.slot else 0.0

    def with_level(self, v: float) -> "EstimatorState":
        return replace(self, v_prev=float(v))


@dataclass(frozen=True)
class HeuristicDecision:
    power: float
    rate: float
    smoothed_level: float
    raw_level: float
    slot_fraction: float
    energy_used: float
    bits_sent: float


def update_estimators(est: EstimatorState | None, harvest: float, arrival: float, gain: float) -> EstimatorState:
    """Fold the current slot's observations into the running statistics."""
    if gain <= 0:
        raise ValueError("gain must be > 0")
    est = est or EstimatorState()
    return EstimatorState(est.slot + 1, est.h_sum + harvest, est.b_sum + arrival,
                          est.inv_gains + (1.0 / gain,), est.v_prev)


def estimated_bounds(w: float, n: int, e: float, b: float, est: EstimatorState,
                     cfg: SystemConfig) -> tuple[float, float]:
    """Running-mean estimates of (w_e, w_b); slot N falls back to spending everything."""
    if est.slot < 1:
        raise ValueError("estimators hold no observations yet")
    if not 1 <= n <= cfg.horizon_slots:
        raise ValueError(f"slot {n} outside 1..{cfg.horizon_slots}")
    we, wb = kernels.estimated_bounds(float(w), int(n), cfg.horizon_slots, float(e), float(b),
                                      est.h_mean, est.b_mean, np.asarray(est.inv_gains, dtype=float),
                                      ENERGY_SLOT, cfg.bits_per_log2)
    return float(we), float(wb)


def heuristic_power(n: int, e: float, b: float, gain: float, est: EstimatorState, cfg: SystemConfig,
                    k_iters: int | None = None) -> HeuristicDecision:
    """Power and rate for slot ``n``; ``est`` must already include slot n."""
    k_iters = cfg.k_iters if k_iters is None else k_iters
    sw = cfg.bits_per_log2
    w = min(e / ENERGY_SLOT, b / sw)
    for _ in range(k_iters):
        if w <= 0.0:
            break
        w = min(estimated_bounds(w, n, e, b, est, cfg))
    v = w if est.v_prev is None else cfg.beta * w + (1.0 - cfg.beta) * est.v_prev
    rho = max(v - 1.0 / gain, 0.0)
    rate = sw * float(np.log2(1.0 + rho * gain))
    frac, used, sent = kernels.clamped_step(float(e), float(b), rho, rate, ENERGY_SLOT)
    return HeuristicDecision(rho, rate, v, w, float(frac), float(used), float(sent))


def online_arrays(realization: Realization, cfg: SystemConfig, initial_e: float = 0.0,
                  initial_b: float = 0.0) -> dict:
    """Run the heuristic over a realization; the horizon is the realization's length."""
    out = kernels.online_heuristic(
        float(initial_e), float(initial_b),
        np.ascontiguousarray(realization.harvests, dtype=float),
        np.ascontiguousarray(realization.arrivals, dtype=float),
        np.ascontiguousarray(realization.gains, dtype=float),
        ENERGY_SLOT, cfg.bits_per_log2, cfg.beta, cfg.k_iters)
    keys = ("what", "vhat", "rho", "rate", "frac", "used", "sent", "e_start", "b_start")
    res = dict(zip(keys, out[:9]))
    res["e_end"], res["b_end"] = float(out[9]), float(out[10])
    return res


def online_schedule(realization: Realization, cfg: SystemConfig, initial_e: float = 0.0,
                    initial_b: float = 0.0) -> tuple[list[ScheduleEntry], RunMetrics]:
    arr = online_arrays(realization, cfg, initial_e, initial_b)
    arr["w"] = arr["vhat"]
    entries = entries_from_arrays(arr, realization.gains)
    return entries, metrics_from_arrays(arr, realization, cfg, initial_b, level_key="vhat")
