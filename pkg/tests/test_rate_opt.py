"""Tests for `broadcast_mac.rate_opt`."""

import itertools
import math

import numpy as np
import pytest

from broadcast_mac.channel import ChannelModel, PowerAllocation, RateVector
from broadcast_mac.multi_state import baseline_decode_table, decode_table
from broadcast_mac.rate_opt import (
    FrontierPoint,
    average_rate,
    average_rate_coefficients,
    average_rate_general,
    baseline_corners,
    dominance_slack,
    maximize_average_rate,
    maximize_linear,
    proposed_corners,
    trace_frontier_baseline,
    trace_frontier_outer,
    trace_frontier_proposed,
    trace_frontiers,
    upper_envelope,
)
from broadcast_mac.two_state import TwoStateTerms, two_state_terms, region_from_terms, two_state_region
from broadcast_mac.utils import DomainError, GridError

ENDPOINT = 0.5 * math.log2(21)


@pytest.fixture
def model():
    return ChannelModel.two_state(0.25, 1.0, 10, 0.5)


def test_maximize_linear_mixed_pair():
    region = region_from_terms(TwoStateTerms(r11=0.5, r12=1.0, r21=1.0, r1=1.5, r12p=2.2, r21p=2.2, r22=0.7))
    optimum = maximize_linear(region, {(1, 2): 1.0, (2, 1): 1.0})
    assert optimum.value == pytest.approx(22 / 15, abs=1e-12)
    assert optimum.arg.rate(1, 2) == pytest.approx(2.2 / 3, abs=1e-12)
    assert optimum.arg.rate(2, 1) == pytest.approx(2.2 / 3, abs=1e-12)
    assert optimum.arg.rate(1, 1) == 0
    assert optimum.arg.rate(2, 2) == 0


def test_maximize_linear_single_rate_and_ties(model):
    pa = PowerAllocation.two_state(0.4, 0.3, 0.2, 0.1)
    region = two_state_region(model, pa)
    optimum = maximize_linear(region, {(2, 2): 1.0})
    assert optimum.value == pytest.approx(two_state_terms(model, pa).r22, abs=1e-12)
    assert optimum.arg == RateVector.two_state(0, 0, 0, optimum.value)

    zero = maximize_linear(region, {})
    assert zero.value == 0
    assert zero.arg == RateVector.zeros(2)


def test_maximize_linear_rejects_bad_objectives(model):
    region = two_state_region(model, PowerAllocation.two_state(0.25, 0.25, 0.25, 0.25))
    with pytest.raises(DomainError):
        maximize_linear(region, {(1, 2): -1.0})
    with pytest.raises(DomainError):
        maximize_linear(region, {(3, 1): 1.0})


def test_maximize_linear_matches_grid_oracle():
    rng = np.random.default_rng(42)
    m = ChannelModel.two_state(0.25, 1.0, 10, 0.5)
    for _ in range(100):
        pa = PowerAllocation.from_flat(rng.dirichlet(np.ones(4)))
        terms = two_state_terms(m, pa)
        w12, w21 = rng.random(2)
        optimum = maximize_linear(region_from_terms(terms), {(1, 2): w12, (2, 1): w21})

        x, y = np.meshgrid(np.arange(0, terms.r12 + 1e-3, 1e-3), np.arange(0, terms.r21 + 1e-3, 1e-3))
        feasible = (
            (x <= terms.r12)
            & (y <= terms.r21)
            & (x + y <= terms.r1)
            & (2 * x + y <= terms.r12p)
            & (x + 2 * y <= terms.r21p)
        )
        oracle = float((w12 * x + w21 * y)[feasible].max())
        assert oracle <= optimum.value + 1e-12
        assert optimum.value - oracle <= 2e-3


def test_upper_envelope_of_rectangles():
    corners = [FrontierPoint(1.0, 2.0, None), FrontierPoint(2.0, 1.0, None)]
    envelope = upper_envelope(corners, [0.0, 1.0, 1.5, 2.0, 3.0])
    assert [pt.y for pt in envelope] == [2.0, 2.0, 1.0, 1.0, 0.0]
    assert [pt.x for pt in envelope] == [0.0, 1.0, 1.5, 2.0, 3.0]
    assert upper_envelope([]) == []


def test_trace_frontiers_share_one_ladder(model):
    envelopes = trace_frontiers(model, 0.5, include_outer=True, samples=11)
    assert list(envelopes) == ["proposed", "baseline", "outer"]
    ladders = [[pt.x for pt in envelope] for envelope in envelopes.values()]
    assert ladders[0] == ladders[1] == ladders[2]
    assert len(ladders[0]) == 11
    assert dominance_slack(envelopes["proposed"], envelopes["baseline"]) >= -1e-9
    assert list(trace_frontiers(model, 0.5, samples=5)) == ["proposed", "baseline"]

    assert len(trace_frontier_proposed(model, 0.5, samples=7)) == 7
    with pytest.raises(DomainError):
        dominance_slack(envelopes["proposed"], envelopes["baseline"][:3])


def test_coarse_frontier_dominates_baseline(model):
    proposed = proposed_corners(model, 1.0)
    assert len(proposed) == 4
    ladder = np.linspace(0, 3, 31)
    ours = trace_frontier_proposed(model, 1.0, ladder)
    theirs = trace_frontier_baseline(model, 1.0, ladder)
    assert all(a.y >= b.y - 1e-9 for a, b in zip(ours, theirs))


def test_frontier_dominance_and_endpoint(model):
    proposed = proposed_corners(model, 0.02)
    baseline = baseline_corners(model, 0.02)
    assert len(baseline) == 51
    ladder = np.linspace(0.0, max(pt.x for pt in proposed + baseline), 200)
    ours = upper_envelope(proposed, ladder)
    theirs = upper_envelope(baseline, ladder)

    assert min(a.y - b.y for a, b in zip(ours, theirs)) >= -1e-9
    assert ours[0].y == pytest.approx(ENDPOINT, abs=1e-12)
    assert theirs[0].y == pytest.approx(ENDPOINT, abs=1e-12)
    assert ours[0].allocation.flat() == (0, 0, 0, 1)


def test_outer_envelope_contains_proposed(model):
    ladder = np.linspace(0, 4, 41)
    outer = trace_frontier_outer(model, 0.1, ladder)
    ours = trace_frontier_proposed(model, 0.1, ladder)
    assert all(o.y >= p.y - 1e-12 for o, p in zip(outer, ours))
    assert {pt.scheme for pt in outer} == {"outer"}


def test_average_rate_examples(model):
    rv = RateVector.two_state(0.2, 0.1, 0.1, 0.3)
    assert average_rate(model, rv, 0.5) == pytest.approx(0.75)
    assert average_rate(model, rv, 1.0) == pytest.approx(0.4)
    assert average_rate(model, rv, 0.0) == pytest.approx(2 * 0.7)
    with pytest.raises(DomainError):
        average_rate(model, rv, 1.5)


def test_average_rate_general_matches_closed_form():
    rng = np.random.default_rng(20)
    for _ in range(1000):
        p = float(rng.random())
        m = ChannelModel.two_state(0.25, 1.0, 10, p)
        rv = RateVector.two_state(*rng.random(4))
        assert average_rate_general(m, rv) == pytest.approx(average_rate(m, rv, p), abs=1e-12)


def test_average_rate_general_examples():
    m = ChannelModel.two_state(0.25, 1.0, 10, 0.0)
    rv = RateVector.two_state(0.1, 0.2, 0.3, 0.4)
    assert average_rate_general(m, rv) == pytest.approx(2.0)

    m3 = ChannelModel((0.2, 0.5, 1.0), 8, (1 / 3, 1 / 3, 1 / 3))
    assert average_rate_general(m3, RateVector.from_mapping(3, {(1, 1): 1.0})) == pytest.approx(2.0)


@pytest.mark.parametrize("ell", [1, 2, 3])
def test_average_rate_general_matches_exhaustive_expectation(ell):
    rng = np.random.default_rng(ell)
    probs = rng.dirichlet(np.ones(ell))
    m = ChannelModel(tuple(range(1, ell + 1)), 10, tuple(probs))
    rv = RateVector(rng.random((ell, ell)).tolist())
    table = decode_table(ell)
    expected = math.fsum(
        probs[p - 1] * probs[q - 1] * math.fsum(rv.rate(u, v) for _, u, v in table.decoded(p, q))
        for p, q in itertools.product(range(1, ell + 1), repeat=2)
    )
    assert average_rate_general(m, rv) == pytest.approx(expected, abs=1e-12)


def test_baseline_table_coefficients(model):
    coefficients = average_rate_coefficients(model, baseline_decode_table())
    assert coefficients[(1, 1)] == pytest.approx(2.0)
    assert coefficients[(1, 2)] == pytest.approx(2 * 0.5)
    assert coefficients[(2, 1)] == 0
    assert coefficients[(2, 2)] == 0


def test_maximize_average_rate_always_weak():
    m = ChannelModel.two_state(0.25, 1.0, 5, 1.0)
    proposed = maximize_average_rate(m, 0.1)
    baseline = maximize_average_rate(m, 0.1, baseline=True)
    best_r11 = two_state_terms(m, PowerAllocation.two_state(1, 0, 0, 0)).r11
    assert proposed.value == pytest.approx(2 * best_r11, abs=1e-9)
    assert proposed.value == pytest.approx(baseline.value, abs=1e-6)


@pytest.mark.parametrize("alpha1", [0.25, 0.5, 0.75, 0.95])
@pytest.mark.parametrize("p", [0.2, 0.5, 0.8])
def test_proposed_average_rate_beats_baseline(alpha1, p):
    m = ChannelModel.two_state(alpha1, 1.0, 5, p)
    proposed = maximize_average_rate(m, 0.1, refine=False)
    baseline = maximize_average_rate(m, 0.1, baseline=True, refine=False)
    assert proposed.value >= baseline.value - 1e-9
    assert baseline.allocation.beta(2, 1) == baseline.allocation.beta(2, 2) == 0
    assert proposed.value == pytest.approx(average_rate(m, proposed.rates, p), abs=1e-12)


def test_refinement_never_loses(model):
    coarse = maximize_average_rate(model, 0.25, refine=False)
    refined = maximize_average_rate(model, 0.25, refine=True)
    assert refined.value >= coarse.value - 1e-12
    assert refined.evaluations > coarse.evaluations
    assert two_state_region(model, refined.allocation).contains(refined.rates)


def test_workers_do_not_change_the_optimum(model):
    single = maximize_average_rate(model, 0.25, refine=False)
    pooled = maximize_average_rate(model, 0.25, refine=False, workers=2)
    assert pooled == single


def test_baseline_needs_two_states():
    m3 = ChannelModel((0.2, 0.5, 1.0), 8, (1 / 3, 1 / 3, 1 / 3))
    with pytest.raises(DomainError):
        maximize_average_rate(m3, 0.5, baseline=True)


def test_oversized_grid_is_rejected_before_searching():
    m3 = ChannelModel((0.2, 0.5, 1.0), 8, (1 / 3, 1 / 3, 1 / 3))
    with pytest.raises(GridError, match="allocations"):
        maximize_average_rate(m3, 0.02)


def test_optimum_does_not_grow_with_weak_probability():
    values = [
        maximize_average_rate(ChannelModel.two_state(0.25, 1.0, 5, p), 0.1, refine=False).value
        for p in np.linspace(0.0, 1.0, 11)
    ]
    assert all(later <= earlier + 1e-12 for earlier, later in zip(values, values[1:]))


@pytest.mark.parametrize("alpha1", np.round(np.arange(0.25, 0.96, 0.05), 2))
def test_refined_proposed_average_rate_beats_baseline(alpha1):
    m = ChannelModel.two_state(float(alpha1), 1.0, 5, 0.2)
    proposed = maximize_average_rate(m, 0.05)
    baseline = maximize_average_rate(m, 0.05, baseline=True)
    assert proposed.value >= baseline.value - 1e-9
