import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lazysched.core import (
    ArrivalChain,
    FadingProcess,
    HarvestProcess,
    NoStationaryDistribution,
    Realization,
    RunMetrics,
    SystemConfig,
    cumulative_expected_arrivals,
    energy_per_slot,
    expected_future_arrivals,
    power_of_rate,
)


def shannon_power(r, N0=0.83e-9, W=2e7, s=1e-3):
    return N0 * W * (math.pow(2.0, r / (s * W)) - 1.0)


def test_power_of_zero_rate_is_zero(cfg):
    assert power_of_rate(0, cfg) == 0.0


@pytest.mark.parametrize("r, expected_mw", [(6000, 3.837), (54000, 91.27)])
def test_power_matches_closed_form(cfg, r, expected_mw):
    p = power_of_rate(r, cfg)
    assert p == pytest.approx(shannon_power(r), rel=1e-12)
    assert p * 1e3 == pytest.approx(expected_mw, rel=1e-3)


def test_power_rejects_negative_rate(cfg):
    with pytest.raises(ValueError):
        power_of_rate(-1, cfg)


@given(st.floats(0, 1e5), st.floats(0, 1e5))
def test_power_is_convex(r1, r2):
    cfg = SystemConfig()
    mid = power_of_rate((r1 + r2) / 2, cfg)
    assert mid <= (power_of_rate(r1, cfg) + power_of_rate(r2, cfg)) / 2 + 1e-12


def test_energy_per_slot_examples(cfg):
    full = 1e-3 * shannon_power(6000)
    assert energy_per_slot(0, 6000, cfg) == 0.0
    assert energy_per_slot(5000, 0, cfg) == 0.0
    assert energy_per_slot(6000, 6000, cfg) == pytest.approx(full, rel=1e-12)
    assert energy_per_slot(1e6, 6000, cfg) == pytest.approx(full, rel=1e-12)
    assert energy_per_slot(3000, 6000, cfg) == pytest.approx(full / 2, rel=1e-12)
    assert energy_per_slot(6000, 6000, cfg) * 1e6 == pytest.approx(3.837, rel=1e-3)


@given(st.floats(0, 1e5), st.floats(0, 1e5), st.floats(1, 6e4))
def test_energy_monotone(b1, b2, r):
    cfg = SystemConfig()
    lo, hi = sorted((b1, b2))
    assert energy_per_slot(lo, r, cfg) <= energy_per_slot(hi, r, cfg) + 1e-18
    # with a full buffer, a faster rate costs strictly more
    b = 1e6
    assert energy_per_slot(b, r, cfg) < energy_per_slot(b, r * 1.01, cfg)


def test_energy_vectorizes(cfg):
    b = np.array([0, 3000, 6000, 9000])
    out = energy_per_slot(b[:, None], np.array([0, 6000])[None, :], cfg)
    assert out.shape == (4, 2)
    assert np.all(out[:, 0] == 0)


def test_expected_arrivals_examples(chain):
    assert expected_future_arrivals(chain, 0, 1) == pytest.approx(8000.0, rel=1e-12)
    assert expected_future_arrivals(chain, 1, 1) == pytest.approx(0.42 * 80000, rel=1e-12)
    zero = ArrivalChain(chain.transition, [0, 0])
    assert expected_future_arrivals(zero, 1, 17) == 0.0
    with pytest.raises(ValueError):
        expected_future_arrivals(chain, 0, 0)


def test_expected_arrivals_long_run_rate(chain):
    pi1 = 0.1 / 0.68
    a = 5000
    e = expected_future_arrivals(chain, 0, a)
    # the transient is bounded, so the per-slot average converges to pi1*l
    assert e / a == pytest.approx(pi1 * 80000, rel=1e-3)
    assert chain.mean_rate() == pytest.approx(pi1 * 80000, rel=1e-12)


def test_expected_arrivals_matches_matrix_powers(chain):
    T = cumulative_expected_arrivals(chain, 6)
    A = chain.transition
    acc = np.zeros(2)
    for k in range(1, 7):
        acc = acc + np.linalg.matrix_power(A, k) @ chain.lengths
        assert np.allclose(T[:, k], acc, rtol=1e-13)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 10**5), st.integers(1, 40))
def test_expected_arrivals_nondecreasing_in_window(p, q, l1, a):
    ch = ArrivalChain([[1 - p, p], [q, 1 - q]], [0, l1])
    T = cumulative_expected_arrivals(ch, a + 1)
    assert np.all(np.diff(T, axis=1) >= -1e-9)


def test_stationary_distribution(chain):
    pi = chain.stationary()
    assert pi == pytest.approx([0.58 / 0.68, 0.1 / 0.68], rel=1e-12)


def test_reducible_chain_has_no_unique_stationary():
    ch = ArrivalChain(np.eye(2), [0, 1000])
    with pytest.raises(NoStationaryDistribution):
        ch.stationary()


@pytest.mark.parametrize("kwargs", [
    dict(horizon_slots=0), dict(slot_seconds=0), dict(beta=0), dict(beta=1.5),
    dict(rate_set=(6000, 6000)), dict(rate_set=(9000, 6000)), dict(rate_set=(0, 6000)),
    dict(rate_set=()), dict(tau=0), dict(alpha=-1), dict(etls_variant="other"), dict(k_iters=0),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SystemConfig(**kwargs)


def test_config_units(cfg):
    assert cfg.bits_per_log2 == pytest.approx(2e4)
    assert cfg.noise_power == pytest.approx(0.0166)
    assert cfg.energy_unit_joules == pytest.approx(1e-6)
    assert list(cfg.rates) == [0, 6000, 9000, 12000, 18000, 24000, 36000, 48000, 54000]


def test_chain_validation():
    with pytest.raises(ValueError):
        ArrivalChain([[0.5, 0.6], [0.5, 0.5]], [0, 1])
    with pytest.raises(ValueError):
        ArrivalChain([[1.0]], [-1])
    with pytest.raises(ValueError):
        ArrivalChain([[1.0]], [0, 1])
    with pytest.raises(ValueError):
        ArrivalChain([[0.5, 0.5], [0.5, 0.5]], [0, 1], initial_state=2)
    ch = ArrivalChain([[0.5, 0.5], [0.5, 0.5]], [0, 1], initial_state=1)
    assert list(ch.start_distribution()) == [0.0, 1.0]


def test_chain_is_immutable(chain):
    with pytest.raises(ValueError):
        chain.transition[0, 0] = 0.5


def test_process_validation():
    with pytest.raises(ValueError):
        HarvestProcess(kind="poisson")
    with pytest.raises(ValueError):
        HarvestProcess(amount=-1)
    with pytest.raises(ValueError):
        HarvestProcess(p_event=1.5)
    with pytest.raises(ValueError):
        FadingProcess(gains=(0.0,), probabilities=(1.0,))
    with pytest.raises(ValueError):
        FadingProcess(gains=(1.0, 2.0), probabilities=(0.5, 0.6))
    assert HarvestProcess().mean() == pytest.approx(0.025)
    assert HarvestProcess(kind="two_state_markov").mean() == pytest.approx(0.025)


def test_realization_validation():
    z = np.zeros(3)
    with pytest.raises(ValueError):
        Realization(z, z[:2], z, np.ones(3))
    with pytest.raises(ValueError):
        Realization(z, z, z, np.zeros(3))
    r = Realization(np.arange(3.0), np.zeros(3, int), z, np.ones(3))
    assert r.truncated(2).horizon == 2


def test_run_metrics_derived_fields():
    m = RunMetrics(horizon=4, total_energy=2.0, delivered_bits=30, backlog_end_bits=10,
                   total_arrived_bits=40, terminal_cost=0.5, slot_seconds=1e-3, energy_unit_joules=1e-6)
    assert m.total_cost == 2.5
    assert m.backlog_percentage == 25.0
    assert m.avg_throughput_bits == 7.5
    assert m.avg_throughput_mbps == pytest.approx(7.5e-3)
    assert m.energy_per_slot_nj == pytest.approx(0.5 * 1e-6 * 1e9)
    assert m.conservation_error() == 0
