"""Online lazy scheduling: exact DP policy, terminal cost and heuristics.

Backlogs live on an integer lattice whose quantum is the gcd of every rate
and packet length, so the DP dynamics ``b' = (b - r)_+ + l(j)`` stay exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from . import kernels
from .core import (
    ArrivalChain,
    InstanceTooLarge,
    LatticeMismatch,
    OutOfHorizon,
    SystemConfig,
    cumulative_expected_arrivals,
    energy_per_slot,
    power_of_rate,
)

__all__ = [
    "DpSolution",
    "terminal_cost",
    "lattice_quantum",
    "dp_solve",
    "dp_rate",
    "etls_required_rate",
    "etls_rate",
    "hasty_rate",
    "constant_rate",
    "round_up_rate",
    "brute_force_cost",
]


def terminal_cost(b, cfg: SystemConfig):
    """Energy (J) to drain ``b`` leftover bits at constant rate over ``tau`` extra slots."""
    b = np.asarray(b, dtype=float)
    c = cfg.tau * cfg.slot_seconds * np.asarray(power_of_rate(np.maximum(b, 0.0) / cfg.tau, cfg))
    return float(c) if c.ndim == 0 else c


def lattice_quantum(cfg: SystemConfig, chain: ArrivalChain) -> int:
    vals = [int(r) for r in cfg.rate_set] + [int(v) for v in chain.lengths if v > 0]
    return reduce(math.gcd, vals)


@dataclass(frozen=True)
class DpSolution:
    """Value and policy tables of the lazy-scheduling DP.

    ``value[n - 1, k, i]`` is J_n(k * quantum, i) for n = 1..N+1 and
    ``policy[n - 1, k, i]`` indexes ``rates`` for n = 1..N.
    """

    value: np.ndarray
    policy: np.ndarray
    rates: np.ndarray
    quantum: int
    horizon: int

    @property
    def max_backlog(self) -> int:
        return (self.value.shape[1] - 1) * self.quantum

    def lattice_index(self, b: float) -> int:
        # off-lattice backlogs round up to the next lattice point
        k = int(math.ceil(b / self.quantum - 1e-12))
        return min(max(k, 0), self.value.shape[1] - 1)

    def J(self, n: int, b: float, i: int) -> float:
        if not 1 <= n <= self.horizon + 1:
            raise OutOfHorizon(f"slot {n} outside 1..{self.horizon + 1}")
        return float(self.value[n - 1, self.lattice_index(b), i])


def dp_solve(cfg: SystemConfig, chain: ArrivalChain, quantum: int | None = None,
             max_backlog: int | None = None) -> DpSolution:
    """Backward induction of the expected-energy DP over slots N..1.

    The lattice spans 0..max_backlog, by default (N+1)*max l(j) so that every
    reachable state is exact; transitions past the top are clipped.
    """
    N = cfg.horizon_slots
    q = lattice_quantum(cfg, chain) if quantum is None else int(quantum)
    if q <= 0:
        raise LatticeMismatch("lattice quantum must be positive")
    rates = cfg.rates
    bad = [int(v) for v in list(rates) + list(chain.lengths) if int(v) % q]
    if bad:
        raise LatticeMismatch(f"values {bad} are not multiples of the lattice quantum {q}")
    if max_backlog is None:
        max_backlog = max((N + 1) * int(chain.lengths.max()), int(rates.max()))
    K = int(math.ceil(max_backlog / q)) + 1
    backlog = np.arange(K, dtype=float) * q
    stage = np.asarray(energy_per_slot(backlog[:, None], rates[None, :].astype(float), cfg))
    stage = np.ascontiguousarray(stage, dtype=float)
    # J_{N+1}(b, i) = C(b - l(i)), with the last "arrival" removed
    terminal = np.asarray(terminal_cost(backlog[:, None] - chain.lengths[None, :], cfg), dtype=float)
    value, policy = kernels.lazy_backward(
        stage, np.ascontiguousarray(terminal), np.ascontiguousarray(chain.transition),
        (rates // q).astype(np.int64), (chain.lengths // q).astype(np.int64), N)
    return DpSolution(value=value, policy=policy, rates=rates, quantum=q, horizon=N)


def dp_rate(sol: DpSolution, n: int, b: float, i: int) -> int:
    """Optimal rate (bits/slot) at slot ``n`` for backlog ``b`` in arrival state ``i``."""
    if not 1 <= n <= sol.horizon:
        raise OutOfHorizon(f"slot {n} outside 1..{sol.horizon}")
    return int(sol.rates[sol.policy[n - 1, sol.lattice_index(b), i]])


def round_up_rate(r_req: float, cfg: SystemConfig) -> int:
    """Smallest available rate >= r_req, else the largest rate."""
    for r in cfg.rate_set:
        if r >= r_req - 1e-9:
            return int(r)
    return int(cfg.rate_set[-1])


def etls_required_rate(n: int, b: float, i: int, cfg: SystemConfig, chain: ArrivalChain,
                       cum_expected: np.ndarray | None = None) -> float:
    """Expected stretched-string rate before rounding to an available rate.

    ``cum_expected`` is the table from ``cumulative_expected_arrivals`` and may
    be passed in to avoid recomputation inside simulation loops.
    """
    N = cfg.horizon_slots
    if cum_expected is None:
        cum_expected = cumulative_expected_arrivals(chain, N)
    remaining = max(N - n, 0)
    if cfg.etls_variant == "one_step":
        return float(b + cum_expected[i, min(1, remaining)])
    a_max = max(int(math.ceil(N + cfg.alpha - n - 1e-12)), 1)
    a = np.arange(1, a_max + 1)
    future = cum_expected[i, np.minimum(a, remaining)]
    return float(np.min((b + future) / a))


def etls_rate(n: int, b: float, i: int, cfg: SystemConfig, chain: ArrivalChain,
              cum_expected: np.ndarray | None = None) -> int:
    if b <= 0:
        return 0
    return round_up_rate(etls_required_rate(n, b, i, cfg, chain, cum_expected), cfg)


def hasty_rate(b: float, cfg: SystemConfig) -> int:
    """Largest rate strictly below the backlog; the smallest rate if none is."""
    if b <= 0:
        return 0
    below = [r for r in cfg.rate_set if r < b]
    return int(below[-1]) if below else int(cfg.rate_set[0])


def constant_rate(chain: ArrivalChain, cfg: SystemConfig) -> int:
    """Lowest rate strictly above the stationary mean arrival rate."""
    mean = chain.mean_rate()
    for r in cfg.rate_set:
        if r > mean:
            return int(r)
    return int(cfg.rate_set[-1])


def brute_force_cost(cfg: SystemConfig, chain: ArrivalChain, b1: float, i1: int,
                     max_trees: int = 2_000_000) -> float:
    """Minimum expected cost over every decision tree, by exhaustive enumeration.

    A decision tree assigns a rate from {0} U V to each arrival history
    (i_2..i_n); its expected cost is summed over all arrival paths.  Shares no
    code with the backward induction and is only usable on tiny instances.
    """
    N = cfg.horizon_slots
    m = chain.n_states
    rates = [0] + [int(r) for r in cfg.rate_set]
    n_nodes = sum(m ** n for n in range(N))
    # compare exponents so huge instances are refused without building anything
    if n_nodes * math.log(len(rates)) > math.log(max_trees) + 1e-9:
        raise InstanceTooLarge(f"{len(rates)}^{n_nodes} decision trees exceed the cap of {max_trees}")
    nodes = [h for n in range(N) for h in itertools.product(range(m), repeat=n)]
    node_index = {h: k for k, h in enumerate(nodes)}
    A = chain.transition
    paths = []
    for hist in itertools.product(range(m), repeat=N - 1):
        prob = 1.0
        prev = i1
        for j in hist:
            prob *= A[prev, j]
            prev = j
        if prob > 0:
            paths.append((hist, prob))

    def slot_energy(b, r):
        if r == 0 or b <= 0:
            return 0.0
        return cfg.slot_seconds * cfg.noise_power * (2.0 ** (r / cfg.bits_per_log2) - 1.0) * min(b / r, 1.0)

    def drain(b):
        if b <= 0:
            return 0.0
        return cfg.tau * cfg.slot_seconds * cfg.noise_power * (2.0 ** (b / cfg.tau / cfg.bits_per_log2) - 1.0)

    best = math.inf
    for tree in itertools.product(range(len(rates)), repeat=len(nodes)):
        total = 0.0
        for hist, prob in paths:
            b = float(b1)
            cost = 0.0
            for n in range(N):
                r = rates[tree[node_index[hist[:n]]]]
                cost += slot_energy(b, r)
                b = max(b - r, 0.0)
                if n + 1 < N:
                    b += chain.lengths[hist[n]]
            total += prob * (cost + drain(b))
        best = min(best, total)
    return best
