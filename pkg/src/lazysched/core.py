"""Shared domain types, unit conventions and process specifications.

Units
-----
Lazy problem: rates in bits/slot, energies in joules, powers in watts.

Generalized problem: powers are normalized so that the receiver noise power
is one unit.  ``gamma`` is SNR per unit of power, ``1/gamma`` is a power, and
harvested energy is counted in power-unit x slot.  ``SystemConfig.power_unit``
gives the watts behind one power unit, so one energy unit is
``power_unit * slot_seconds`` joules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DOT11G_RATES",
    "LazySchedError",
    "LatticeMismatch",
    "OutOfHorizon",
    "NoStationaryDistribution",
    "NoConvergence",
    "InstanceTooLarge",
    "SystemConfig",
    "ArrivalChain",
    "HarvestProcess",
    "FadingProcess",
    "Realization",
    "RunMetrics",
    "reference_chain",
    "power_of_rate",
    "energy_per_slot",
    "expected_future_arrivals",
    "cumulative_expected_arrivals",
]

# 802.11g rates (Mbit/s) expressed in bits per 1 ms slot
DOT11G_RATES = (6000, 9000, 12000, 18000, 24000, 36000, 48000, 54000)


class LazySchedError(Exception):
    """Base class for all errors raised by this package."""


class LatticeMismatch(LazySchedError, ValueError):
    pass


class OutOfHorizon(LazySchedError, IndexError):
    pass


class NoStationaryDistribution(LazySchedError, ValueError):
    pass


class NoConvergence(LazySchedError, RuntimeError):
    pass


class InstanceTooLarge(LazySchedError, ValueError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    horizon_slots: int = 100
    slot_seconds: float = 1e-3
    bandwidth_hz: float = 2e7
    noise_density: float = 0.83e-9
    rate_set: tuple[int, ...] = DOT11G_RATES
    tau: float = 3.0
    alpha: float = 3.0
    beta: float = 0.2
    power_unit: float = 1e-3
    k_iters: int = 5
    etls_variant: str = "stretched"

    def __post_init__(self):
        object.__setattr__(self, "rate_set", tuple(self.rate_set))
        if int(self.horizon_slots) != self.horizon_slots or self.horizon_slots < 1:
            raise ValueError(f"horizon_slots must be a positive integer, got {self.horizon_slots!r}")
        if self.slot_seconds <= 0:
            raise ValueError("slot_seconds must be > 0")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be > 0")
        if self.noise_density <= 0:
            raise ValueError("noise_density must be > 0")
        if not self.rate_set:
            raise ValueError("rate_set must not be empty")
        if any(r <= 0 for r in self.rate_set):
            raise ValueError("rate_set entries must be > 0")
        if any(b <= a for a, b in zip(self.rate_set, self.rate_set[1:])):
            raise ValueError("rate_set must be strictly increasing")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.power_unit <= 0:
            raise ValueError("power_unit must be > 0")
        if self.k_iters < 1:
            raise ValueError("k_iters must be >= 1")
        if self.etls_variant not in ("stretched", "one_step"):
            raise ValueError("etls_variant must be 'stretched' or 'one_step'")

    @property
    def bits_per_log2(self) -> float:
        """Bits carried per slot per unit of log2(1 + SNR), i.e. s*W."""
        return self.slot_seconds * self.bandwidth_hz

    @property
    def noise_power(self) -> float:
        """N0*W in watts."""
        return self.noise_density * self.bandwidth_hz

    @property
    def energy_unit_joules(self) -> float:
        return self.power_unit * self.slot_seconds

    @property
    def rates(self) -> np.ndarray:
        """Candidate rates including the idle rate 0."""
        return np.array((0,) + self.rate_set, dtype=np.int64)


@dataclass(frozen=True)
class ArrivalChain:
    """Markov packet-arrival process: state ``i`` delivers ``lengths[i]`` bits."""

    transition: np.ndarray
    lengths: np.ndarray
    initial_state: int | None = None
    initial_dist: np.ndarray | None = None

    def __post_init__(self):
        A = np.array(self.transition, dtype=float)
        lengths = np.array(self.lengths, dtype=np.int64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("transition must be a square matrix")
        if lengths.shape != (A.shape[0],):
            raise ValueError("lengths must have one entry per state")
        if np.any(A < 0) or np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition rows must be probability vectors (sum to 1 within 1e-12)")
        if np.any(lengths < 0):
            raise ValueError("lengths must be >= 0")
        A.setflags(write=False)
        lengths.setflags(write=False)
        object.__setattr__(self, "transition", A)
        object.__setattr__(self, "lengths", lengths)
        if self.initial_state is not None and not 0 <= self.initial_state < len(lengths):
            raise ValueError("initial_state out of range")
        if self.initial_dist is not None:
            d = np.array(self.initial_dist, dtype=float)
            if d.shape != lengths.shape or np.any(d < 0) or abs(d.sum() - 1.0) > 1e-12:
                raise ValueError("initial_dist must be a probability vector over the states")
            d.setflags(write=False)
            object.__setattr__(self, "initial_dist", d)

    @property
    def n_states(self) -> int:
        return len(self.lengths)

    def stationary(self) -> np.ndarray:
        """Unique stationary distribution; raises if it is not unique."""
        m = self.n_states
        M = self.transition.T - np.eye(m)
        if m - np.linalg.matrix_rank(M, tol=1e-10) != 1:
            raise NoStationaryDistribution("arrival chain has no unique stationary distribution")
        lhs = np.vstack([M, np.ones(m)])
        rhs = np.zeros(m + 1)
        rhs[-1] = 1.0
        pi, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()

    def start_distribution(self) -> np.ndarray:
        if self.initial_state is not None:
            d = np.zeros(self.n_states)
            d[self.initial_state] = 1.0
            return d
        if self.initial_dist is not None:
            return np.asarray(self.initial_dist)
        return self.stationary()

    def mean_rate(self) -> float:
        """Stationary mean arrival in bits/slot."""
        return float(self.stationary() @ self.lengths)


def reference_chain(packet_bits: int = 80_000) -> ArrivalChain:
    """Two-state chain: idle, or one 10 kB packet per slot."""
    return ArrivalChain(
        transition=np.array([[0.9, 0.1], [0.58, 0.42]]),
        lengths=np.array([0, packet_bits]),
    )


@dataclass(frozen=True)
class HarvestProcess:
    """Energy harvests of ``amount`` energy units.

    ``bernoulli``: an event each slot with probability ``p_event``.
    ``two_state_markov``: on/off chain that keeps its state with probability
    ``p_stay``; it starts "on" with probability ``p_event``.
    """

    kind: str = "bernoulli"
    amount: float = 0.05
    p_event: float = 0.5
    p_stay: float = 0.9

    def __post_init__(self):
        if self.kind not in ("bernoulli", "two_state_markov"):
            raise ValueError(f"unknown harvest kind {self.kind!r}")
        if self.amount < 0:
            raise ValueError("harvest amount must be >= 0")
        for name in ("p_event", "p_stay"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def mean(self) -> float:
        if self.kind == "bernoulli":
            return self.amount * self.p_event
        # symmetric on/off chain: stationary "on" probability is 1/2 unless frozen
        if self.p_stay == 1.0:
            return self.amount * self.p_event
        return self.amount * 0.5


@dataclass(frozen=True)
class FadingProcess:
    """I.i.d. per-slot channel gain drawn from ``gains`` with ``probabilities``."""

    gains: tuple[float, ...] = (30.0, 12.0)
    probabilities: tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "gains", tuple(float(g) for g in self.gains))
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        if len(self.gains) != len(self.probabilities) or not self.gains:
            raise ValueError("gains and probabilities must be non-empty and equally long")
        if any(g <= 0 for g in self.gains):
            raise ValueError("gains must be > 0")
        if any(p < 0 for p in self.probabilities) or abs(sum(self.probabilities) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")


@dataclass(frozen=True)
class Realization:
    arrivals: np.ndarray  # bits arriving at the start of each slot
    arrival_states: np.ndarray
    harvests: np.ndarray
    gains: np.ndarray
    seed: int = 0
    index: int = 0

    def __post_init__(self):
        n = len(self.arrivals)
        if not (len(self.arrival_states) == len(self.harvests) == len(self.gains) == n):
            raise ValueError("realization traces must all have the same length")
        if np.any(self.arrivals < 0) or np.any(self.harvests < 0) or np.any(self.gains <= 0):
            raise ValueError("realization entries must be nonnegative (gains positive)")

    @property
    def horizon(self) -> int:
        return len(self.arrivals)

    def truncated(self, n: int) -> "Realization":
        return Realization(self.arrivals[:n], self.arrival_states[:n], self.harvests[:n],
                           self.gains[:n], self.seed, self.index)


@dataclass
class RunMetrics:
    """Outcome of one closed-loop run.

    Energies are joules for the lazy problem and energy units for the
    generalized one; ``energy_per_slot_nj`` is always in nanojoules.
    """

    horizon: int
    total_energy: float
    delivered_bits: float
    backlog_end_bits: float
    total_arrived_bits: float
    initial_backlog_bits: float = 0.0
    terminal_cost: float = 0.0
    slot_seconds: float = 1e-3
    energy_unit_joules: float = 1.0
    trace: dict = field(default_factory=dict, repr=False)

    @property
    def total_cost(self) -> float:
        return self.total_energy + self.terminal_cost

    @property
    def backlog_percentage(self) -> float:
        if self.total_arrived_bits <= 0:
            return 0.0
        return 100.0 * self.backlog_end_bits / self.total_arrived_bits

    @property
    def avg_throughput_bits(self) -> float:
        return self.delivered_bits / self.horizon

    @property
    def avg_throughput_mbps(self) -> float:
        return self.avg_throughput_bits / self.slot_seconds / 1e6

    @property
    def energy_per_slot(self) -> float:
        return self.total_energy / self.horizon

    @property
    def energy_per_slot_nj(self) -> float:
        return self.energy_per_slot * self.energy_unit_joules * 1e9

    def conservation_error(self) -> float:
        """delivered + leftover - (initial + arrived); zero up to rounding."""
        return (self.delivered_bits + self.backlog_end_bits
                - self.initial_backlog_bits - self.total_arrived_bits)


def power_of_rate(r, cfg: SystemConfig):
    """AWGN power (W) needed to carry ``r`` bits/slot: N0*W*(2**(r/(s*W)) - 1)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("rate must be >= 0")
    p = cfg.noise_power * np.expm1(r / cfg.bits_per_log2 * np.log(2.0))
    return float(p) if p.ndim == 0 else p


def energy_per_slot(b, r, cfg: SystemConfig):
    """Energy (J) spent in one slot holding ``b`` bits at rate ``r``.

    The slot is only partially used when ``b < r``.
    """
    b = np.asarray(b, dtype=float)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(r > 0, np.minimum(b / np.where(r > 0, r, 1.0), 1.0), 0.0)
    e = cfg.slot_seconds * power_of_rate(r, cfg) * frac
    e = np.asarray(e)
    return float(e) if e.ndim == 0 else e


def cumulative_expected_arrivals(chain: ArrivalChain, horizon: int) -> np.ndarray:
    """Table ``T[i, a]`` of expected bits arriving over the next ``a`` slots from state ``i``.

    ``T[:, 0]`` is zero.  Built by repeated multiplication with the transition
    matrix, never by eigendecomposition.
    """
    A = chain.transition
    m = chain.n_states
    out = np.zeros((m, horizon + 1))
    step = chain.lengths.astype(float)
    for a in range(1, horizon + 1):
        step = A @ step  # step[i] = E[l(i_{n+a}) | i_n = i]
        out[:, a] = out[:, a - 1] + step
    return out


def expected_future_arrivals(chain: ArrivalChain, i: int, a: int) -> float:
    """Expected bits arriving in the ``a`` slots after a slot in state ``i``."""
    if a < 1:
        raise ValueError("a must be >= 1")
    return float(cumulative_expected_arrivals(chain, a)[i, a])
