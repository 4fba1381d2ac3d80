"""Trace generation, closed-loop simulation and Monte-Carlo experiment drivers.

Every realization draws from its own RNG stream keyed by (seed, index,
purpose), so traces do not depend on execution order or worker count, and a
shorter horizon sees a prefix of a longer one.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (
    ArrivalChain,
    FadingProcess,
    HarvestProcess,
    LazySchedError,
    Realization,
    RunMetrics,
    SystemConfig,
    cumulative_expected_arrivals,
    energy_per_slot,
    reference_chain,
)
from .lazy_sched import DpSolution, constant_rate, dp_rate, dp_solve, etls_rate, hasty_rate, terminal_cost
from .online_heuristic import online_schedule
from .waterfill_offline import ScheduleEntry, offline_schedule

__all__ = [
    "LAZY_POLICIES",
    "GENERAL_POLICIES",
    "RunMetrics",
    "ExperimentSpec",
    "LazyContext",
    "generate_realization",
    "simulate_lazy",
    "simulate_general",
    "check_run",
    "run_experiment",
    "run_sweep",
    "aggregate",
    "worker_count",
]

LAZY_POLICIES = ("dp", "etls", "hasty", "constant")
GENERAL_POLICIES = ("offline_waterfill", "online_heuristic")

_TAG_ARRIVALS, _TAG_HARVEST, _TAG_FADING = 0, 1, 2
_FLOAT_SLACK = 1e-9


@dataclass(frozen=True)
class ExperimentSpec:
    config: SystemConfig = field(default_factory=SystemConfig)
    chain: ArrivalChain = field(default_factory=reference_chain)
    harvest: HarvestProcess = field(default_factory=HarvestProcess)
    fading: FadingProcess = field(default_factory=FadingProcess)
    policies: tuple[str, ...] = LAZY_POLICIES
    seed: int = 0
    realizations: int = 10
    horizons: tuple[int, ...] = ()
    initial_e: float = 0.0
    initial_b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if not self.policies:
            raise ValueError("policies must not be empty")
        unknown = [p for p in self.policies if p not in LAZY_POLICIES + GENERAL_POLICIES]
        if unknown:
            raise ValueError(f"unknown policies {unknown}")
        kinds = {p in LAZY_POLICIES for p in self.policies}
        if len(kinds) > 1:
            raise ValueError("cannot mix lazy and generalized policies in one experiment")
        if any(h < 1 for h in self.horizons):
            raise ValueError("horizons must be >= 1")
        if self.initial_e < 0 or self.initial_b < 0:
            raise ValueError("initial_e and initial_b must be >= 0")

    @property
    def problem(self) -> str:
        return "lazy" if self.policies[0] in LAZY_POLICIES else "general"

    def with_horizon(self, n: int) -> "ExperimentSpec":
        return replace(self, config=replace(self.config, horizon_slots=int(n)))


def _stream(seed: int, index: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index, tag))))


def _markov_path(u: np.ndarray, start: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Inverse-CDF Markov path: ``u[0]`` picks the start, ``u[n]`` the step into slot n."""
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    states = np.empty(len(u), dtype=np.int64)
    c0 = np.cumsum(start)
    c0[-1] = 1.0
    s = int(np.searchsorted(c0, u[0], side="right"))
    for n in range(len(u)):
        if n:
            s = int(np.searchsorted(cum[s], u[n], side="right"))
        states[n] = s
    return states


def generate_realization(spec: ExperimentSpec, seed: int | None = None, index: int = 0,
                         horizon: int | None = None) -> Realization:
    """Sample arrivals, harvests and gains for one realization."""
    seed = spec.seed if seed is None else int(seed)
    N = spec.config.horizon_slots if horizon is None else int(horizon)
    chain, hp, fp = spec.chain, spec.harvest, spec.fading

    states = _markov_path(_stream(seed, index, _TAG_ARRIVALS).random(N), chain.start_distribution(),
                          chain.transition)
    arrivals = chain.lengths[states].astype(float)

    u = _stream(seed, index, _TAG_HARVEST).random(N)
    if hp.kind == "bernoulli":
        on = u < hp.p_event
    else:
        P = np.array([[hp.p_stay, 1.0 - hp.p_stay], [1.0 - hp.p_stay, hp.p_stay]])
        # state 0 = off, 1 = on
        on = _markov_path(u, np.array([1.0 - hp.p_event, hp.p_event]), P) == 1
    harvests = np.where(on, hp.amount, 0.0)

    u = _stream(seed, index, _TAG_FADING).random(N)
    cum = np.cumsum(fp.probabilities)
    cum[-1] = 1.0
    gains = np.asarray(fp.gains)[np.searchsorted(cum, u, side="right")]
    return Realization(arrivals, states, harvests, gains, seed, index)


# ---------------------------------------------------------------------------
# lazy problem


@dataclass(frozen=True)
class LazyContext:
    """Per-experiment precomputation shared by every lazy run."""

    dp: DpSolution | None
    cum_expected: np.ndarray
    constant: int

    @classmethod
    def build(cls, cfg: SystemConfig, chain: ArrivalChain, with_dp: bool = True,
              initial_b: float = 0.0) -> "LazyContext":
        dp = None
        if with_dp:
            top = int(math.ceil(initial_b)) + (cfg.horizon_slots + 1) * int(chain.lengths.max())
            dp = dp_solve(cfg, chain, max_backlog=max(top, int(max(cfg.rate_set))))
        return cls(dp, cumulative_expected_arrivals(chain, cfg.horizon_slots), constant_rate(chain, cfg))


def simulate_lazy(policy: str, realization: Realization, cfg: SystemConfig, chain: ArrivalChain,
                  ctx: LazyContext | None = None, initial_b: int = 0) -> RunMetrics:
    """Closed-loop run of a lazy-scheduling policy; cost is energy plus terminal cost."""
    if policy not in LAZY_POLICIES:
        raise ValueError(f"unknown lazy policy {policy!r}")
    N = cfg.horizon_slots
    if realization.horizon != N:
        raise ValueError(f"realization has {realization.horizon} slots, config expects {N}")
    if ctx is None:
        ctx = LazyContext.build(cfg, chain, with_dp=policy == "dp", initial_b=initial_b)
    arrivals = [int(a) for a in realization.arrivals]
    states = realization.arrival_states
    rates = np.zeros(N, dtype=np.int64)
    sent = np.zeros(N, dtype=np.int64)
    backlog = np.zeros(N, dtype=np.int64)
    energy = np.zeros(N)
    b = int(initial_b) + arrivals[0]
    for n in range(N):
        i = int(states[n])
        if policy == "dp":
            r = dp_rate(ctx.dp, n + 1, b, i)
        elif policy == "etls":
            r = etls_rate(n + 1, b, i, cfg, chain, ctx.cum_expected)
        elif policy == "hasty":
            r = hasty_rate(b, cfg)
        else:
            r = ctx.constant if b > 0 else 0
        backlog[n] = b
        rates[n] = r
        energy[n] = energy_per_slot(b, r, cfg)
        d = min(r, b)
        sent[n] = d
        b -= d
        if n + 1 < N:
            b += arrivals[n + 1]
    return RunMetrics(
        horizon=N,
        total_energy=float(energy.sum()),
        delivered_bits=int(sent.sum()),
        backlog_end_bits=b,
        total_arrived_bits=int(sum(arrivals)),
        initial_backlog_bits=int(initial_b),
        terminal_cost=terminal_cost(b, cfg),
        slot_seconds=cfg.slot_seconds,
        energy_unit_joules=1.0,
        trace={"rate": rates, "sent": sent, "b_start": backlog, "energy": energy},
    )


# ---------------------------------------------------------------------------
# generalized problem


def simulate_general(policy: str, realization: Realization, cfg: SystemConfig, initial_e: float = 0.0,
                     initial_b: float = 0.0) -> tuple[RunMetrics, list[ScheduleEntry]]:
    """Run the offline water-fill (sees the whole trace) or the causal online heuristic."""
    if policy == "offline_waterfill":
        entries, m = offline_schedule(realization, cfg, initial_e, initial_b)
    elif policy == "online_heuristic":
        entries, m = online_schedule(realization, cfg, initial_e, initial_b)
    else:
        raise ValueError(f"unknown generalized policy {policy!r}")
    m.trace["harvest"] = np.asarray(realization.harvests)
    m.trace["arrival"] = np.asarray(realization.arrivals)
    m.trace["initial_e"] = float(initial_e)
    return m, entries


def check_run(m: RunMetrics) -> list[str]:
    """Bit-conservation and causality violations of a finished run (empty when clean).

    Integer (lazy) runs are checked exactly; float (generalized) runs allow
    1e-9 relative rounding slack.
    """
    problems = []
    sent = np.asarray(m.trace.get("sent", []))
    exact = sent.dtype.kind in "iu"
    total = m.initial_backlog_bits + m.total_arrived_bits
    slack = 0 if exact else _FLOAT_SLACK * max(1.0, total)
    if abs(m.conservation_error()) > slack:
        problems.append(f"bit conservation off by {m.conservation_error()}")
    if m.total_energy < 0 or m.backlog_end_bits < 0:
        problems.append("negative energy or backlog")
    if "b_start" in m.trace and len(sent):
        if np.any(sent > np.asarray(m.trace["b_start"]) + slack):
            problems.append("sent more bits than buffered in some slot")
    if "arrival" in m.trace:
        arr_cum = m.initial_backlog_bits + np.cumsum(m.trace["arrival"])
        if np.any(np.cumsum(sent) > arr_cum + _FLOAT_SLACK * np.maximum(1.0, arr_cum)):
            problems.append("data causality violated")
    if "harvest" in m.trace:
        h_cum = m.trace.get("initial_e", 0.0) + np.cumsum(m.trace["harvest"])
        used_cum = np.cumsum(m.trace["used"])
        if np.any(used_cum > h_cum + _FLOAT_SLACK * np.maximum(1.0, h_cum)):
            problems.append("energy causality violated")
        if np.any(np.asarray(m.trace["used"]) < 0):
            problems.append("negative energy use")
    return problems


# ---------------------------------------------------------------------------
# experiments


def worker_count() -> int:
    env = os.environ.get("LAZYSCHED_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"LAZYSCHED_THREADS must be an integer, got {env!r}") from None
    return min(8, os.cpu_count() or 1)


def _lazy_rows(spec: ExperimentSpec, ctx: LazyContext, index: int) -> list[dict]:
    cfg = spec.config
    rows = []
    try:
        real = generate_realization(spec, spec.seed, index)
    except LazySchedError as exc:
        return [_error_row(index, p, exc) for p in spec.policies]
    for p in spec.policies:
        try:
            m = simulate_lazy(p, real, cfg, spec.chain, ctx, int(spec.initial_b))
        except LazySchedError as exc:
            rows.append(_error_row(index, p, exc))
            continue
        problems = check_run(m)
        rows.append({
            "realization_index": index,
            "policy": p,
            "total_energy_J": m.total_energy,
            "backlog_pct": m.backlog_percentage,
            "delivered_bits": m.delivered_bits,
            "terminal_cost_J": m.terminal_cost,
            "total_cost_J": m.total_cost,
            "status": "ok" if not problems else "violation: " + "; ".join(problems),
        })
    return rows


def _general_rows(spec: ExperimentSpec, index: int, keep_traces: bool) -> list[dict]:
    cfg = spec.config
    rows = []
    try:
        real = generate_realization(spec, spec.seed, index)
    except LazySchedError as exc:
        return [_error_row(index, p, exc) for p in spec.policies]
    for p in spec.policies:
        try:
            m, _ = simulate_general(p, real, cfg, spec.initial_e, spec.initial_b)
        except LazySchedError as exc:
            rows.append(_error_row(index, p, exc))
            continue
        problems = check_run(m)
        row = {
            "realization_index": index,
            "policy": p,
            "throughput_mbps": m.avg_throughput_mbps,
            "energy_per_slot_nJ": m.energy_per_slot_nj,
            "total_energy_units": m.total_energy,
            "delivered_bits": m.delivered_bits,
            "backlog_pct": m.backlog_percentage,
            "status": "ok" if not problems else "violation: " + "; ".join(problems),
        }
        if keep_traces:
            row["_trace"] = {
                "w": m.trace["w"], "rho": m.trace["rho"], "rate": m.trace["rate"],
                "gain": real.gains, "arrival_bits": real.arrivals, "harvest": real.harvests,
            }
        rows.append(row)
    return rows


def _error_row(index: int, policy: str, exc: Exception) -> dict:
    return {"realization_index": index, "policy": policy, "status": f"error: {type(exc).__name__}: {exc}"}


def run_experiment(spec: ExperimentSpec, keep_traces: bool = False) -> list[dict]:
    """One row per (realization, policy), ordered by realization then policy.

    Realizations run on up to ``LAZYSCHED_THREADS`` threads; output never
    depends on the worker count.  Failing realizations yield rows whose
    ``status`` starts with ``error:``; the rest of the run continues.
    """
    if spec.problem == "lazy":
        ctx = LazyContext.build(spec.config, spec.chain, with_dp="dp" in spec.policies,
                                initial_b=spec.initial_b)

        def job(k):
            return _lazy_rows(spec, ctx, k)
    else:
        def job(k):
            return _general_rows(spec, k, keep_traces)

    idx = range(spec.realizations)
    workers = min(worker_count(), spec.realizations)
    if workers == 1:
        chunks = [job(k) for k in idx]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, idx))
    return [row for chunk in chunks for row in chunk]


def aggregate(rows: Sequence[dict]) -> list[dict]:
    """Per-policy means over successful rows, in first-seen policy order."""
    order: list[str] = []
    groups: dict[str, list[dict]] = {}
    for r in rows:
        if r["policy"] not in groups:
            order.append(r["policy"])
            groups[r["policy"]] = []
        if r.get("status") == "ok":
            groups[r["policy"]].append(r)
    out = []
    for p in order:
        g = groups[p]
        agg = {"policy": p, "realizations": len(g)}
        keys = [k for k in (g[0] if g else {}) if k not in ("realization_index", "policy", "status")
                and not k.startswith("_")]
        for k in keys:
            agg["mean_" + k] = float(np.mean([r[k] for r in g]))
        out.append(agg)
    return out


def run_sweep(spec: ExperimentSpec, horizons: Sequence[int] | None = None) -> list[dict]:
    """Aggregate rows for each horizon in the sweep, horizon-major."""
    horizons = tuple(horizons) if horizons is not None else spec.horizons
    if not horizons:
        raise ValueError("sweep needs at least one horizon")
    out = []
    for n in horizons:
        for agg in aggregate(run_experiment(spec.with_horizon(n))):
            out.append({"horizon": int(n), **agg})
    return out
