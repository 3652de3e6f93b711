"""Tests for `broadcast_mac.multi_state`."""

import math

import numpy as np
import pytest

from broadcast_mac.channel import ChannelModel, PowerAllocation
from broadcast_mac.multi_state import (
    baseline_decode_table,
    bound_terms,
    reduction_check,
    decode_table,
    index_sets,
    interference_terms,
    multi_state_region,
)
from broadcast_mac.two_state import two_state_terms, stage_constants
from broadcast_mac.utils import DomainError

W11 = {(1, 1, 1), (2, 1, 1)}


@pytest.fixture
def model():
    return ChannelModel.two_state(0.25, 1.0, 10, 0.4)


@pytest.fixture
def pa():
    return PowerAllocation.two_state(0.4, 0.3, 0.2, 0.1)


def three_state_model():
    return ChannelModel((0.2, 0.5, 1.0), 8, (1 / 3, 1 / 3, 1 / 3))


def test_index_sets_examples():
    sets = index_sets(1, 2, 2)
    assert sets.j1 == (1,)
    assert sets.j2 == ((1, 2),)
    assert sets.j3 == ((2, 2),)
    assert index_sets(1, 2, 3).j3 == ((2, 2), (2, 3), (3, 3))
    assert index_sets(2, 3, 3).j1 == (2,)


def test_index_sets_strict_form_is_empty_at_the_top_state():
    assert index_sets(1, 2, 2, strict=True).j2 == ()
    assert index_sets(1, 2, 3, strict=True).j2 == ((3, 1),)


@pytest.mark.parametrize("u, v", [(2, 1), (1, 1), (0, 2), (1, 3)])
def test_index_sets_rejects_bad_pairs(u, v):
    with pytest.raises(DomainError):
        index_sets(u, v, 2)


def test_interference_terms_examples(pa):
    b11, b12, b21, _ = pa.flat()
    terms = interference_terms(pa, 1, 2, j=1)
    assert terms["B1"] == pytest.approx(1 - b11 - b21)
    assert terms["B3"] == pytest.approx(1 - b11 - b21 - b12)
    assert interference_terms(pa, 2, 2)["B8"] == 0
    assert all(0 <= x <= 1 for x in terms.values())
    assert "B1" not in interference_terms(pa, 1, 2)

    with pytest.raises(DomainError):
        interference_terms(pa, 1, 3)


def test_interference_terms_top_state_is_empty_for_any_allocation():
    rng = np.random.default_rng(1)
    for _ in range(20):
        pa = PowerAllocation.from_flat(rng.dirichlet(np.ones(9)))
        assert interference_terms(pa, 3, 3)["B8"] == 0


def test_bound_terms_match_two_state_constants(model, pa):
    a = stage_constants(model, pa)
    assert bound_terms(model, pa, 1).b[12] == pytest.approx(a[3], abs=1e-12)
    pair = bound_terms(model, pa, 1, 2).b
    assert pair[1] == pytest.approx(a[14], abs=1e-12)
    assert pair[9] == pytest.approx(two_state_terms(model, pa).r12p, abs=1e-12)


def test_bound_terms_omit_empty_sets(model, pa):
    assert 6 in bound_terms(model, pa, 1, 2).b
    assert 6 not in bound_terms(model, pa, 1, 2, strict=True).b
    with pytest.raises(DomainError):
        bound_terms(model, pa, 3)


def test_single_state_region():
    m = ChannelModel((0.5,), 10, (1.0,))
    region = multi_state_region(m, PowerAllocation.symmetric([[1.0]]))
    assert len(region) == 1
    (c,) = region.constraints
    assert c.indices == ((1, 1),)
    assert c.bound == pytest.approx(min(m.cap(0.5, 0), 0.5 * m.cap(1.0, 0)))


def test_three_state_region_shape():
    m = three_state_model()
    region = multi_state_region(m, PowerAllocation.from_flat([1 / 9] * 9))
    assert len(region) == 18
    assert region.ell == 3
    assert all(c.bound >= 0 for c in region.constraints)
    assert "2R13+R31(1,3)" in [c.tag for c in region.constraints]


def test_two_state_region_reduces(model, pa):
    region = multi_state_region(model, pa)
    terms = two_state_terms(model, pa)
    assert region.bound("R12(1,2)") == pytest.approx(terms.r12, abs=1e-12)
    assert region.bound("R21(1,2)") == pytest.approx(terms.r21, abs=1e-12)
    assert region.bound("sum(1,2)") == pytest.approx(terms.r1, abs=1e-12)
    assert region.bound("2R12+R21(1,2)") == pytest.approx(terms.r12p, abs=1e-12)
    assert region.bound("R12+2R21(1,2)") == pytest.approx(terms.r21p, abs=1e-12)
    assert region.bound("R11(1)") == pytest.approx(terms.r11, abs=1e-12)
    assert region.bound("R22(2)") == pytest.approx(terms.r22, abs=1e-12)


def test_decode_table_two_states():
    table = decode_table(2)
    assert table.decoded(1, 1) == W11
    assert table.decoded(1, 2) == W11 | {(1, 1, 2), (2, 2, 1)}
    assert table.decoded(2, 1) == W11 | {(1, 2, 1), (2, 1, 2)}
    assert len(table.decoded(2, 2)) == 8
    assert list(table) == [(1, 1), (1, 2), (2, 1), (2, 2)]


def test_decode_table_stages():
    stages = decode_table(2).stages(2, 2)
    assert stages[1] == W11
    assert stages[2] == {(1, 1, 2), (1, 2, 1), (2, 1, 2), (2, 2, 1)}
    assert stages[3] == {(1, 2, 2), (2, 2, 2)}

    stages = decode_table(3).stages(3, 3)
    assert sorted(stages) == [1, 2, 3, 4, 5]
    assert stages[5] == {(1, 3, 3), (2, 3, 3)}


@pytest.mark.parametrize("ell", [1, 2, 3, 4, 5, 6])
def test_decode_table_invariants(ell):
    table = decode_table(ell)
    assert table.is_monotone()
    assert len(table.decoded(ell, ell)) == 2 * ell * ell
    assert table.decoded(1, 1) == W11
    assert table.streams() == table.decoded(ell, ell)


def test_decode_table_rejects_empty():
    with pytest.raises(DomainError):
        decode_table(0)


def test_baseline_decode_table():
    table = baseline_decode_table()
    assert table.is_monotone()
    assert table.decoded(1, 1) == W11
    assert table.decoded(1, 2) == W11 | {(1, 1, 2)}
    assert table.decoded(2, 1) == W11 | {(2, 1, 2)}
    assert table.decoded(2, 2) == W11 | {(1, 1, 2), (2, 1, 2)}


def test_reduction_examples(model, pa):
    report = reduction_check(model, pa)
    assert report.passed
    assert report.max_deviation <= 1e-12

    report = reduction_check(model, PowerAllocation.two_state(0, 0, 0, 1))
    assert report.passed
    assert two_state_terms(model, PowerAllocation.two_state(0, 0, 0, 1)).r22 == pytest.approx(0.25 * math.log2(21))


def test_reduction_on_random_allocations():
    rng = np.random.default_rng(2024)
    for m in (ChannelModel.two_state(0.25, 1.0, 10, 0.5), ChannelModel.two_state(0.6, 0.8, 3, 0.2)):
        for _ in range(200):
            pa = PowerAllocation.from_flat(rng.dirichlet(np.ones(4)))
            report = reduction_check(m, pa)
            assert report.passed, report.deviations


def test_strict_index_set_fails_reduction(model, pa):
    report = reduction_check(model, pa, strict=True)
    assert not report.passed
    assert report.missing == ("b6(1,2)",)
    assert math.isinf(report.max_deviation)
