"""Tests for `broadcast_mac.simulation`."""

import numpy as np
import pytest

from broadcast_mac.channel import ChannelModel, PowerAllocation, RateVector
from broadcast_mac.multi_state import baseline_decode_table
from broadcast_mac.rate_opt import average_rate, average_rate_general, maximize_linear
from broadcast_mac.simulation import BLOCK_TRIALS, GENERATOR, SimConfig, run_sim
from broadcast_mac.two_state import two_state_region
from broadcast_mac.utils import DomainError, InfeasibleRatesError

PA = PowerAllocation.two_state(0.4, 0.3, 0.2, 0.1)


def interior_rates(m, pa):
    region = two_state_region(m, pa)
    vertex = maximize_linear(region, {(1, 1): 1.0, (1, 2): 1.0, (2, 1): 1.0, (2, 2): 1.0}).arg
    return RateVector(tuple(tuple(0.9 * r for r in row) for row in vertex.rates))


@pytest.fixture
def model():
    return ChannelModel.two_state(0.25, 1.0, 10, 0.4)


def test_sim_config_validation(model):
    rv = RateVector.zeros(2)
    with pytest.raises(DomainError):
        SimConfig(0, 1, model, rv, PA)
    with pytest.raises(DomainError):
        SimConfig(10, -1, model, rv, PA)
    with pytest.raises(DomainError):
        SimConfig(10, 2**64, model, rv, PA)


def test_always_weak_channel_is_exact():
    m = ChannelModel.two_state(0.25, 1.0, 10, 1.0)
    rv = RateVector.two_state(0.05, 0, 0, 0)
    report = run_sim(SimConfig(1000, 7, m, rv, PA))
    assert report.empirical_mean == pytest.approx(0.1, abs=1e-15)
    assert report.std_error == 0
    assert report.z_score == 0
    assert report.per_state_counts[(1, 1)] == 1000


def test_infeasible_rates_are_rejected_before_sampling(model):
    rv = RateVector.two_state(0, 0, 0, 10.0)
    with pytest.raises(InfeasibleRatesError) as e:
        run_sim(SimConfig(1000, 0, model, rv, PA))
    assert any("r22" in v for v in e.value.violations)


def test_rates_must_match_the_model(model):
    with pytest.raises(DomainError):
        run_sim(SimConfig(10, 0, model, RateVector.zeros(3), PA))


def test_runs_are_reproducible(model):
    rv = interior_rates(model, PA)
    first = run_sim(SimConfig(5000, 123, model, rv, PA))
    second = run_sim(SimConfig(5000, 123, model, rv, PA))
    assert first == second
    assert first.generator == GENERATOR
    assert first.seed == 123
    assert sum(first.per_state_counts.values()) == 5000


def test_report_does_not_depend_on_workers(model):
    rv = interior_rates(model, PA)
    trials = 2 * BLOCK_TRIALS + 17
    single = run_sim(SimConfig(trials, 9, model, rv, PA))
    pooled = run_sim(SimConfig(trials, 9, model, rv, PA, workers=3))
    assert single == pooled


def test_empirical_mean_agrees_with_closed_form(model):
    rv = interior_rates(model, PA)
    report = run_sim(SimConfig(200_000, 2024, model, rv, PA))
    assert report.formula_value == pytest.approx(average_rate(model, rv, 0.4), abs=1e-12)
    assert report.formula_value == pytest.approx(average_rate_general(model, rv), abs=1e-12)
    if abs(report.z_score) > 3:
        # rerun once with another seed
        report = run_sim(SimConfig(200_000, 2025, model, rv, PA))
    assert abs(report.z_score) <= 3


def test_repeated_runs_scatter_around_the_closed_form(model):
    rv = interior_rates(model, PA)
    z = np.array([run_sim(SimConfig(20_000, seed, model, rv, PA)).z_score for seed in range(100)])
    assert np.count_nonzero(np.abs(z) <= 4) >= 99
    assert np.count_nonzero(np.abs(z) <= 2) >= 85
    assert abs(z.mean()) <= 0.5


def test_state_counts_follow_the_state_probabilities(model):
    trials = 100_000
    report = run_sim(SimConfig(trials, 31, model, RateVector.zeros(2), PA))
    for (p, q), count in report.per_state_counts.items():
        prob = model.joint_probability(p, q)
        sigma = np.sqrt(trials * prob * (1 - prob))
        assert abs(count - trials * prob) <= 4 * sigma


def test_baseline_table_is_accepted(model):
    rv = RateVector.two_state(0.05, 0.05, 0, 0)
    report = run_sim(SimConfig(20_000, 5, model, rv, PA, table=baseline_decode_table()))
    assert report.formula_value == pytest.approx(2 * 0.05 + 2 * 0.6 * 0.05, abs=1e-12)
    assert report.state_rates[(1, 1)] == pytest.approx(0.1)
    assert report.state_rates[(2, 2)] == pytest.approx(0.2)
