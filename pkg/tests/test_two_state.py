"""Tests for `broadcast_mac.two_state`."""

import math

import numpy as np
import pytest

from broadcast_mac.channel import ChannelModel, PowerAllocation, RateVector
from broadcast_mac.rate_opt import maximize_linear
from broadcast_mac.two_state import (
    two_state_terms,
    check_stagewise_feasibility,
    baseline_region,
    relabelled_baseline,
    stage_constants,
    two_state_region,
    outer_bound,
)
from broadcast_mac.utils import DomainError


@pytest.fixture
def model():
    return ChannelModel.two_state(0.25, 1.0, 10, 0.4)


def random_allocations(seed, n):
    rng = np.random.default_rng(seed)
    return [PowerAllocation.from_flat(rng.dirichlet(np.ones(4))) for _ in range(n)]


def random_interior_point(rng, region):
    """A convex combination of region vertices, pulled towards the origin."""
    weights = rng.random(4)
    vertex = maximize_linear(region, dict(zip([(1, 1), (1, 2), (2, 1), (2, 2)], weights))).arg
    scale = rng.random()
    return RateVector(tuple(tuple(scale * r for r in row) for row in vertex.rates))


def test_all_power_on_w22(model):
    terms = two_state_terms(model, PowerAllocation.two_state(0, 0, 0, 1))
    assert terms.r22 == pytest.approx(0.25 * math.log2(21))
    assert terms.r22 == pytest.approx(1.098079, abs=1e-6)
    assert terms.r11 == terms.r12 == terms.r21 == 0


def test_all_power_on_w11(model):
    terms = two_state_terms(model, PowerAllocation.two_state(1, 0, 0, 0))
    assert terms.r12 == terms.r21 == terms.r22 == 0
    assert terms.r11 == pytest.approx(0.5 * model.cap(2 * 0.25, 0))


def test_terms_are_the_region_bounds(model):
    pa = PowerAllocation.two_state(0.4, 0.3, 0.2, 0.1)
    terms = two_state_terms(model, pa).as_dict()
    region = two_state_region(model, pa)
    assert len(region) == 7
    for tag, value in terms.items():
        assert region.bound(tag) == value


def test_terms_need_symmetric_two_state_inputs(model):
    with pytest.raises(DomainError):
        two_state_terms(model, PowerAllocation.asymmetric([[1, 0], [0, 0]], [[0, 1], [0, 0]]))
    with pytest.raises(DomainError):
        two_state_terms(model, PowerAllocation.from_flat([1 / 9] * 9))


def test_w22_only_region(model):
    region = two_state_region(model, PowerAllocation.two_state(0, 0, 0, 1))
    assert region.contains(RateVector.two_state(0, 0, 0, 0.25 * math.log2(21)))
    assert not region.contains(RateVector.two_state(1e-9, 0, 0, 0))
    assert not region.contains(RateVector.two_state(0, 0, 0, 0.25 * math.log2(21) + 1e-9))


def test_stage_constants_examples(model):
    a = stage_constants(model, PowerAllocation.two_state(0.4, 0.3, 0.2, 0.1))
    assert a[19] == pytest.approx(0.5, abs=1e-15)
    assert a[4] == a[8]
    assert a.symmetry_deviation() <= 1e-12

    a = stage_constants(model, PowerAllocation.two_state(1, 0, 0, 0))
    assert a[3] == pytest.approx(model.cap(0.5, 0))
    assert a[12] == pytest.approx(model.cap(2.0, 0))
    assert a[3] < a[12]

    with pytest.raises(IndexError):
        a[34]


def test_weak_sum_constant_never_exceeds_strong_one():
    for m in (ChannelModel.two_state(0.25, 1.0, 10, 0.4), ChannelModel.two_state(0.6, 0.7, 2, 0.5)):
        for pa in random_allocations(17, 200):
            a = stage_constants(m, pa)
            assert a[3] <= a[12] + 1e-12


def test_stage_constants_symmetric_identities():
    m = ChannelModel.two_state(0.3, 0.9, 5, 0.5)
    for pa in random_allocations(7, 50):
        assert stage_constants(m, pa).symmetry_deviation() <= 1e-12


def test_baseline_examples(model):
    bounds = baseline_region(model, PowerAllocation.two_state(0.5, 0.5, 0, 0))
    assert bounds.rs == pytest.approx(1.729716, abs=1e-6)

    bounds = baseline_region(model, PowerAllocation.two_state(0, 1, 0, 0))
    assert bounds.rw == 0
    assert bounds.rs == pytest.approx(model.cap(2.0, 0))

    bounds = baseline_region(model, PowerAllocation.two_state(1, 0, 0, 0))
    assert bounds.rs == 0
    a = stage_constants(model, PowerAllocation.two_state(1, 0, 0, 0))
    assert bounds.rw == min(a[3], a[6], a[9], a[4] + a[8])

    with pytest.raises(DomainError):
        baseline_region(model, PowerAllocation.two_state(0.5, 0.25, 0.25, 0))


def test_two_layer_face_projection(model):
    rng = np.random.default_rng(19)
    for b11 in rng.random(200):
        pa = PowerAllocation.two_state(b11, 1 - b11, 0, 0)
        bounds = baseline_region(model, pa)
        terms = two_state_terms(model, pa)
        assert 2 * terms.r11 == pytest.approx(bounds.rw, abs=1e-12)
        assert 2 * terms.r12 <= bounds.rs + 1e-12


@pytest.mark.parametrize("b11", [0.0, 0.1, 0.35, 0.5, 0.8, 1.0])
def test_relabelled_baseline_reproduces_two_layer_bounds(model, b11):
    pa = PowerAllocation.two_state(b11, 1 - b11, 0, 0)
    bounds = baseline_region(model, pa)
    terms = two_state_terms(model, relabelled_baseline(pa))
    assert 2 * terms.r11 == pytest.approx(bounds.rw, abs=1e-12)
    assert 2 * terms.r22 == pytest.approx(bounds.rs, abs=1e-12)


def test_outer_bound_examples(model):
    outer = outer_bound(model, PowerAllocation.two_state(0, 0, 0, 1))
    assert outer.cap_R11 == outer.cap_R12 == outer.cap_R21 == 0
    assert outer.cap_R22 == pytest.approx(0.25 * math.log2(21))


def test_outer_bound_contains_region_vertices(model):
    rng = np.random.default_rng(3)
    for pa in random_allocations(11, 500):
        region = two_state_region(model, pa)
        outer = outer_bound(model, pa)
        terms = two_state_terms(model, pa)
        a = stage_constants(model, pa)
        assert terms.r12 <= 0.5 * a[24] + 1e-12
        assert terms.r21 <= 0.5 * a[27] + 1e-12
        assert terms.r11 <= 0.5 * a[3] + 1e-12

        weights = dict(zip([(1, 1), (1, 2), (2, 1), (2, 2)], rng.random(4)))
        assert outer.contains(maximize_linear(region, weights).arg)


def test_stagewise_zero_rates(model):
    report = check_stagewise_feasibility(model, PowerAllocation.two_state(0.4, 0.3, 0.2, 0.1), RateVector.zeros(2))
    assert report.ok
    assert sorted(report.states) == [(1, 1), (1, 2), (2, 1), (2, 2)]
    assert report.states[(2, 2)].stages == 3
    assert report.states[(1, 2)].stages == 2
    assert report.states[(1, 1)].stages == 1


def test_stagewise_isolated_w22_violation(model):
    pa = PowerAllocation.two_state(0.4, 0.3, 0.2, 0.1)
    r22 = two_state_terms(model, pa).r22
    report = check_stagewise_feasibility(model, pa, RateVector.two_state(0, 0, 0, r22 + 0.1))
    assert not report.ok
    assert report.failed_states() == [(2, 2)]
    assert {v.stage for v in report.states[(2, 2)].violations} == {3}


def test_stagewise_passes_inside_region(model):
    rng = np.random.default_rng(5)
    for pa in random_allocations(13, 500):
        rv = random_interior_point(rng, two_state_region(model, pa))
        assert check_stagewise_feasibility(model, pa, rv).ok
