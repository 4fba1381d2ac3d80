"""Tiny-instance cross-checks of the solvers against exhaustive oracles.

Used by the ``oracle-check`` subcommand.  Each check returns a
``CheckResult``; none of them raise on a mismatch.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import ArrivalChain, Realization, SystemConfig
from .lazy_sched import brute_force_cost, dp_solve
from .waterfill_offline import evaluate_levels, gen_dp_oracle, grid_search_oracle, offline_arrays

__all__ = ["CheckResult", "run_all", "lazy_dp_check", "waterfill_grid_check", "gen_dp_check"]

_Q = 1000


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    instances: int
    detail: str


def random_lazy_instance(rng: np.random.Generator):
    """(cfg, chain, b1, i1, max_backlog) with at most 20 lattice points of 1000 bits."""
    N = int(rng.integers(1, 4))
    V = tuple(sorted(rng.choice(np.arange(1, 7), size=int(rng.integers(1, 3)), replace=False) * _Q))
    m = int(rng.integers(1, 3))
    A = rng.dirichlet(np.ones(m), size=m)
    A[:, -1] = 1.0 - A[:, :-1].sum(axis=1)
    lengths = rng.integers(0, 5, size=m) * _Q
    i1 = int(rng.integers(0, m))
    top = N * int(lengths.max()) + int(lengths.max())
    extra = int(rng.integers(0, (19 * _Q - top) // _Q + 1)) * _Q
    cfg = SystemConfig(horizon_slots=N, rate_set=V, tau=float(rng.choice([1.0, 2.0, 3.0])))
    chain = ArrivalChain(A, lengths)
    return cfg, chain, int(lengths[i1]) + extra, i1, extra + top


def lazy_dp_check(n_instances: int = 60, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        cfg, chain, b1, i1, top = random_lazy_instance(rng)
        sol = dp_solve(cfg, chain, quantum=_Q, max_backlog=top)
        bf = brute_force_cost(cfg, chain, b1, i1)
        worst = max(worst, abs(sol.J(1, b1, i1) - bf) / max(abs(bf), 1e-300))
    return CheckResult("lazy DP vs decision-tree enumeration", bool(worst <= 1e-9), n_instances,
                       f"worst relative gap {worst:.3g}")


def random_general_instance(rng: np.random.Generator, max_slots: int = 4) -> Realization:
    N = int(rng.integers(1, max_slots + 1))
    H = rng.choice([0.0, 0.05], N)
    H[0] = rng.choice([0.05, 0.1])
    B = rng.choice([0.0, 80_000.0], N, p=[0.6, 0.4])
    B[0] = rng.choice([20_000.0, 80_000.0])
    g = rng.choice([30.0, 12.0], N)
    return Realization(B, (B > 0).astype(np.int64), H, g)


def grid_bounds(real: Realization, cfg: SystemConfig, levels: np.ndarray, wf: dict):
    """Throughput slack of grid rounding and the matching energy allowance.

    Rounding the water-fill levels down to the grid keeps the sequence
    nondecreasing and on the grid; the throughput it loses is the
    resolution bound.  Dropping that many bits can save at most the
    marginal energy per bit, max(w) ln2 / (sW), per bit.
    """
    step = float(levels[1] - levels[0])
    floor = np.floor(wf["w"] / step + 1e-12) * step
    t_floor, _ = evaluate_levels(floor, real, cfg)
    slack = float(wf["sent"].sum() - t_floor[0])
    allowance = float(wf["w"].max()) * math.log(2.0) / cfg.bits_per_log2 * slack
    return slack, allowance


def waterfill_grid_check(n_instances: int = 60, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = SystemConfig()
    fails = []
    for k in range(n_instances):
        real = random_general_instance(rng)
        N = real.horizon
        wf = offline_arrays(real, cfg)
        t_wf, e_wf = float(wf["sent"].sum()), float(wf["used"].sum())
        levels = np.linspace(0.0, real.harvests.sum() + float((1.0 / real.gains).max()), 30 if N <= 3 else 20)
        slack, allowance = grid_bounds(real, cfg, levels, wf)
        best = grid_search_oracle(real, cfg, levels)
        tol = 1e-9 * max(t_wf, 1.0)
        if not (t_wf - slack - tol <= best.max_throughput <= t_wf + tol):
            fails.append(f"#{k} throughput {best.max_throughput:.6g} vs {t_wf:.6g} (slack {slack:.3g})")
            continue
        # least energy among grid sequences that stay within the slack of the water-fill throughput
        near = grid_search_oracle(real, cfg, levels, throughput_slack=best.max_throughput - (t_wf - slack))
        if abs(e_wf - near.energy) > allowance + 1e-12:
            fails.append(f"#{k} energy {e_wf:.6g} vs {near.energy:.6g} (allowance {allowance:.3g})")
    return CheckResult("water-fill vs nondecreasing-level grid search", not fails, n_instances,
                       "; ".join(fails[:3]) or "throughput and energy within grid resolution")


def gen_dp_check(n_instances: int = 30, seed: int = 0) -> CheckResult:
    """Deterministic traces: water-fill energy <= DP energy <= grid energy when clearing is feasible."""
    rng = np.random.default_rng(seed)
    cfg = SystemConfig()
    checked = 0
    fails = []
    for _ in range(n_instances):
        N = int(rng.integers(1, 4))
        h = float(rng.choice([0.05, 0.1]))
        a = float(rng.choice([4000.0, 20_000.0]))
        g = float(rng.choice([30.0, 12.0]))
        real = Realization(np.full(N, a), np.ones(N, dtype=np.int64), np.full(N, h), np.full(N, g))
        wf = offline_arrays(real, cfg)
        levels = np.linspace(0.0, h * N + 1.0 / g, 12)
        seqs = np.array(list(itertools.combinations_with_replacement(levels, N)))
        thr, eng = evaluate_levels(seqs, real, cfg)
        clear = thr >= a * N - 1e-6
        if wf["b_end"] > 1e-6 or not clear.any():
            continue
        checked += 1
        e_grid = float(eng[clear].min())
        dp = gen_dp_oracle(cfg, N, [(h, 1.0)], [(a, 1.0)], [(g, 1.0)], levels).value
        e_wf = float(wf["used"].sum())
        if not (e_wf <= dp + 1e-9 and dp <= e_grid + 1e-12):
            fails.append(f"N={N}: {e_wf:.6g} <= {dp:.6g} <= {e_grid:.6g} fails")
    return CheckResult("generalized DP between water-fill and grid energies", bool(not fails and checked > 0),
                       checked, "; ".join(fails[:3]) or f"{checked} clearable instances sandwiched")


def run_all(seed: int = 0, instances: int = 60) -> list[CheckResult]:
    return [
        lazy_dp_check(instances, seed),
        waterfill_grid_check(instances, seed),
        gen_dp_check(max(instances // 2, 1), seed),
    ]
