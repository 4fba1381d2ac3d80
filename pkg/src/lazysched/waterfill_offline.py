"""Offline water-filling for the generalized problem, plus tiny-instance oracles.

Energies are in energy units (power unit x slot, so s = 1 for energy
accounting) and data in bits; a water level ``w`` is a power and the slot
power is ``(w - 1/gamma)_+``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .core import InstanceTooLarge, NoConvergence, Realization, RunMetrics, SystemConfig

__all__ = [
    "ENERGY_SLOT",
    "GenState",
    "ScheduleEntry",
    "FixedPointResult",
    "GridResult",
    "GenDpResult",
    "water_bounds",
    "water_map",
    "fixed_point_water_level",
    "fixed_point_iterates",
    "offline_schedule",
    "offline_arrays",
    "entries_from_arrays",
    "evaluate_levels",
    "grid_search_oracle",
    "gen_dp_oracle",
]

# slot length in energy accounting: energy units are power-unit x slot
ENERGY_SLOT = 1.0
TOL = 1e-9
MAX_ITER = 50


@dataclass(frozen=True)
class GenState:
    slot: int
    battery: float
    backlog: float
    gain: float

    def __post_init__(self):
        if self.battery < 0 or self.backlog < 0:
            raise ValueError("battery and backlog must be >= 0")
        if self.gain <= 0:
            raise ValueError("gain must be > 0")


@dataclass(frozen=True)
class ScheduleEntry:
    slot: int
    water_level: float
    power: float
    rate: float
    slot_fraction: float
    energy_used: float = 0.0
    bits_sent: float = 0.0
    gain: float = 1.0


@dataclass(frozen=True)
class FixedPointResult:
    level: float
    iterations: int
    converged: bool
    third_iterate: float


def _futures(state: GenState, future_H, future_B, gains):
    """Split traces covering slots n..N into the kernel's argument layout.

    The slot-n harvest and arrival are already inside the state, so only
    entries n+1..N of H and B are used.
    """
    H = np.asarray(future_H, dtype=float)
    B = np.asarray(future_B, dtype=float)
    g = np.asarray(gains, dtype=float)
    if not (len(H) == len(B) == len(g)) or len(g) == 0:
        raise ValueError("future_H, future_B and gains must cover the same slots n..N")
    if g[0] != state.gain:
        raise ValueError("gains[0] must be the state's current gain")
    return np.ascontiguousarray(H[1:]), np.ascontiguousarray(B[1:]), np.ascontiguousarray(1.0 / g)


def water_bounds(w: float, state: GenState, future_H, future_B, gains, cfg: SystemConfig) -> tuple[float, float]:
    """(w_e, w_b): the tightest energy and data causality caps on a level held from slot n on.

    ``future_H``, ``future_B`` and ``gains`` cover slots n..N.
    """
    if w <= 0:
        raise ValueError("w must be > 0")
    h, b, ig = _futures(state, future_H, future_B, gains)
    we, wb = kernels.water_bounds(float(w), state.battery, state.backlog, h, b, ig,
                                  ENERGY_SLOT, cfg.bits_per_log2)
    return float(we), float(wb)


def water_map(w: float, state: GenState, future_H, future_B, gains, cfg: SystemConfig) -> float:
    return min(water_bounds(w, state, future_H, future_B, gains, cfg))


def fixed_point_water_level(state: GenState, future_H, future_B, gains, cfg: SystemConfig,
                            tol: float = TOL, max_iter: int = MAX_ITER, accelerate: bool = True,
                            w0: float | None = None) -> FixedPointResult:
    """Greatest fixed point of w -> min(w_e(w), w_b(w)), iterated down from w_max.

    Raises NoConvergence when ``max_iter`` steps do not meet the tolerance.
    """
    h, b, ig = _futures(state, future_H, future_B, gains)
    if w0 is None:
        w0 = (state.battery + float(np.sum(h))) / ENERGY_SLOT + float(np.max(ig))
    w, k, ok, w3 = kernels.fixed_point(float(w0), state.battery, state.backlog, h, b, ig,
                                       ENERGY_SLOT, cfg.bits_per_log2, tol, max_iter, accelerate)
    if not ok:
        raise NoConvergence(f"water level at slot {state.slot} not converged after {max_iter} iterations")
    return FixedPointResult(float(w), int(k), True, float(w3))


def fixed_point_iterates(state: GenState, future_H, future_B, gains, cfg: SystemConfig,
                         n_iter: int = MAX_ITER, accelerate: bool = True,
                         w0: float | None = None) -> np.ndarray:
    """The first ``n_iter`` iterates (w0 first) of the same step rule as the solver.

    Stops early once an iterate repeats to within rounding.
    """
    h, b, ig = _futures(state, future_H, future_B, gains)
    sw = cfg.bits_per_log2
    w = (state.battery + float(np.sum(h))) / ENERGY_SLOT + float(np.max(ig)) if w0 is None else float(w0)
    out = [w]
    for _ in range(n_iter - 1):
        g, slope = kernels.water_map(w, state.battery, state.backlog, h, b, ig, ENERGY_SLOT, sw)
        wn = g
        if accelerate and g < w and slope < 1.0 - 1e-12:
            wn = (g - slope * w) / (1.0 - slope)
        out.append(float(wn))
        if abs(wn - w) < 1e-15 * max(w, 1.0):
            break
        w = wn
    return np.asarray(out)


def offline_arrays(realization: Realization, cfg: SystemConfig, initial_e: float = 0.0,
                   initial_b: float = 0.0, accelerate: bool = True, tol: float = TOL,
                   max_iter: int = MAX_ITER) -> dict:
    """Array form of the offline schedule; raises NoConvergence on any slot."""
    out = kernels.offline_schedule(
        float(initial_e), float(initial_b),
        np.ascontiguousarray(realization.harvests, dtype=float),
        np.ascontiguousarray(realization.arrivals, dtype=float),
        np.ascontiguousarray(realization.gains, dtype=float),
        ENERGY_SLOT, cfg.bits_per_log2, tol, max_iter, accelerate)
    keys = ("w", "rho", "rate", "frac", "used", "sent", "e_start", "b_start", "iters", "converged")
    res = dict(zip(keys, out[:10]))
    res["e_end"], res["b_end"] = float(out[10]), float(out[11])
    bad = np.flatnonzero(~res["converged"])
    if bad.size:
        raise NoConvergence(f"water level not converged at slots {(bad + 1).tolist()}")
    return res


def entries_from_arrays(arr: dict, gains) -> list[ScheduleEntry]:
    return [ScheduleEntry(n + 1, float(arr["w"][n]), float(arr["rho"][n]), float(arr["rate"][n]),
                          float(arr["frac"][n]), float(arr["used"][n]), float(arr["sent"][n]),
                          float(gains[n]))
            for n in range(len(arr["w"]))]


def metrics_from_arrays(arr: dict, realization: Realization, cfg: SystemConfig,
                        initial_b: float, level_key: str = "w") -> RunMetrics:
    trace = {k: np.asarray(arr[k]) for k in ("rho", "rate", "frac", "used", "sent", "e_start", "b_start")}
    trace["w"] = np.asarray(arr[level_key])
    return RunMetrics(
        horizon=realization.horizon,
        total_energy=float(np.sum(arr["used"])),
        delivered_bits=float(np.sum(arr["sent"])),
        backlog_end_bits=arr["b_end"],
        total_arrived_bits=float(np.sum(realization.arrivals)),
        initial_backlog_bits=float(initial_b),
        slot_seconds=cfg.slot_seconds,
        energy_unit_joules=cfg.energy_unit_joules,
        trace=trace,
    )


def offline_schedule(realization: Realization, cfg: SystemConfig, initial_e: float = 0.0,
                     initial_b: float = 0.0, accelerate: bool = True) -> tuple[list[ScheduleEntry], RunMetrics]:
    """Water-fill the whole (known) realization slot by slot."""
    arr = offline_arrays(realization, cfg, initial_e, initial_b, accelerate)
    entries = entries_from_arrays(arr, realization.gains)
    return entries, metrics_from_arrays(arr, realization, cfg, initial_b)


# ---------------------------------------------------------------------------
# oracles


def evaluate_levels(levels, realization: Realization, cfg: SystemConfig,
                    initial_e: float = 0.0, initial_b: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Throughput and energy of water-level sequences under the clamped dynamics.

    ``levels`` has shape (S, N): one candidate sequence per row.  Written
    independently of the kernels so the oracles share no code with them.
    """
    W = np.atleast_2d(np.asarray(levels, dtype=float))
    S, N = W.shape
    if N != realization.horizon:
        raise ValueError("level sequences must span the realization")
    H = realization.harvests
    B = realization.arrivals
    gam = realization.gains
    sw = cfg.bits_per_log2
    e = np.full(S, initial_e + H[0])
    b = np.full(S, initial_b + B[0])
    thr = np.zeros(S)
    eng = np.zeros(S)
    for n in range(N):
        rho = np.maximum(W[:, n] - 1.0 / gam[n], 0.0)
        rate = sw * np.log2(1.0 + rho * gam[n])
        with np.errstate(divide="ignore", invalid="ignore"):
            fe = np.where(rho > 0, e / (ENERGY_SLOT * rho), 1.0)
            fb = np.where(rate > 0, b / rate, 1.0)
        frac = np.minimum(np.minimum(fe, fb), 1.0)
        used = np.minimum(frac * ENERGY_SLOT * rho, e)
        sent = np.minimum(frac * rate, b)
        thr += sent
        eng += used
        e = np.maximum(e - used, 0.0)
        b = np.maximum(b - sent, 0.0)
        if n + 1 < N:
            e += H[n + 1]
            b += B[n + 1]
    return thr, eng


@dataclass(frozen=True)
class GridResult:
    levels: tuple[float, ...]
    throughput: float
    energy: float
    max_throughput: float
    n_sequences: int


def grid_search_oracle(realization: Realization, cfg: SystemConfig, grid: Sequence[float],
                       initial_e: float = 0.0, initial_b: float = 0.0,
                       throughput_slack: float = 0.0) -> GridResult:
    """Exhaustive search over nondecreasing water-level sequences drawn from ``grid``.

    Returns the max-throughput sequence; among sequences within
    ``throughput_slack`` bits of the maximum, the one using least energy.
    """
    N = realization.horizon
    grid = np.unique(np.asarray(grid, dtype=float))
    if N > 5 or len(grid) > 30:
        raise InstanceTooLarge(f"grid search is capped at N <= 5 and 30 levels (got N={N}, {len(grid)} levels)")
    seqs = np.array(list(itertools.combinations_with_replacement(grid, N)), dtype=float)
    thr, eng = evaluate_levels(seqs, realization, cfg, initial_e, initial_b)
    best_t = float(thr.max())
    near = thr >= best_t - max(throughput_slack, 1e-9 * max(best_t, 1.0))
    idx = np.flatnonzero(near)
    k = int(idx[np.argmin(eng[idx])])
    return GridResult(tuple(float(x) for x in seqs[k]), float(thr[k]), float(eng[k]), best_t, len(seqs))


@dataclass
class GenDpResult:
    value: float
    first_levels: dict = field(default_factory=dict)
    states_visited: int = 0


def _discrete(dist, name):
    vals = np.asarray([v for v, _ in dist], dtype=float)
    probs = np.asarray([p for _, p in dist], dtype=float)
    if len(vals) == 0 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a non-empty list of (value, probability) with probabilities summing to 1")
    return list(zip(vals.tolist(), probs.tolist()))


def gen_dp_oracle(cfg: SystemConfig, horizon: int, harvest_dist, arrival_dist, gain_dist,
                  levels: Sequence[float], initial_e: float = 0.0, initial_b: float = 0.0,
                  terminal: Callable[[float], float] | None = None, max_support: int = 20,
                  max_states: int = 2_000_000) -> GenDpResult:
    """Expected minimum cost of the generalized problem by exact backward recursion.

    Harvests, arrivals and gains are i.i.d. per slot with the given finite
    distributions (lists of (value, probability)).  Decisions are water
    levels from ``levels`` and run through the same clamped slot dynamics
    as the schedulers.  Cost is consumed energy plus ``terminal(leftover
    bits)``; the default terminal cost is infinite for any leftover, i.e.
    the backlog must be cleared.

    Only states reachable from the start are evaluated, so there is no
    quantization error; the cost grows as (|M| * |H| * |B| * |gamma|)^N.
    ``first_levels`` maps each slot-1 draw (H, B, gamma) to its optimal level.
    """
    if horizon > 4:
        raise InstanceTooLarge("generalized DP oracle is capped at N <= 4")
    hd = _discrete(harvest_dist, "harvest_dist")
    bd = _discrete(arrival_dist, "arrival_dist")
    gd = _discrete(gain_dist, "gain_dist")
    lv = sorted(set(float(x) for x in levels))
    if max(len(hd), len(bd), len(gd)) > max_support or len(lv) > 30:
        raise InstanceTooLarge(f"supports are capped at {max_support} points and 30 levels")
    branching = len(lv) * len(hd) * len(bd) * len(gd)
    if branching ** horizon > max_states:
        raise InstanceTooLarge(f"{branching}^{horizon} states exceed the cap of {max_states}")
    if terminal is None:
        def terminal(x):
            return 0.0 if x <= 1e-9 else math.inf
    sw = cfg.bits_per_log2
    memo: dict = {}

    def step(e, b, g, w):
        rho = max(w - 1.0 / g, 0.0)
        rate = sw * math.log2(1.0 + rho * g)
        frac = 1.0
        if rho > 0 and rate > 0:
            frac = min(1.0, e / (ENERGY_SLOT * rho), b / rate)
        used = min(frac * ENERGY_SLOT * rho, e)
        sent = min(frac * rate, b)
        return used, max(e - used, 0.0), max(b - sent, 0.0)

    def J(n, e, b, g):
        key = (n, round(e, 12), round(b, 6), g)
        if key in memo:
            return memo[key]
        best, arg = math.inf, lv[0]
        for w in lv:
            used, e2, b2 = step(e, b, g, w)
            if n == horizon:
                c = used + terminal(b2)
            else:
                c = used
                for h, ph in hd:
                    for a, pa in bd:
                        for g2, pg in gd:
                            p = ph * pa * pg
                            if p > 0:
                                c += p * J(n + 1, e2 + h, b2 + a, g2)[0]
            # ties keep the lower level
            margin = 1e-12 * abs(best) if math.isfinite(best) else 0.0
            if c < best - margin:
                best, arg = c, w
        memo[key] = (best, arg)
        return best, arg

    total = 0.0
    first = {}
    for h, ph in hd:
        for a, pa in bd:
            for g, pg in gd:
                p = ph * pa * pg
                if p > 0:
                    v, w = J(1, initial_e + h, initial_b + a, g)
                    total += p * v
                    first[(h, a, g)] = w
    return GenDpResult(total, first, len(memo))
