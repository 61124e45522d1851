import statistics
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bsgkit.metrics import aggregate, compute_ber, compute_brps, round1


@pytest.mark.parametrize("passing,total,expected", [
    (3, 12, 25.0),   # S1: 9 of 12 gold tests failing
    (2, 12, 16.7),   # S5: 10 of 12 failing
    (5, 15, 33.3),   # S8: 10 of 15 failing
    (0, 10, 0.0),
    (12, 12, 100.0),
])
def test_compute_ber(passing, total, expected):
    assert compute_ber(passing, total) == expected


@pytest.mark.parametrize("args", [(1, 0), (0, 0), (-1, 5), (6, 5)])
def test_ber_rejects_bad_counts(args):
    with pytest.raises(ValueError):
        compute_ber(*args)


def test_brps_s1_shape():
    assert compute_brps(3, 12) == 25.0
    assert compute_brps(12, 12) == 100.0
    with pytest.raises(ValueError):
        compute_brps(0, 0)


def test_round_half_up():
    assert round1(Fraction(1, 4) * 100 / 100 * 0.2 * 10) == 0.5
    assert round1(0.25) == 0.3
    assert round1(Fraction(1, 16)) == 0.1
    assert round1(-0.25) == -0.3


def test_aggregate_constant():
    assert aggregate([25.0, 25.0, 25.0]) == (25.0, 0.0)


def test_aggregate_population_sigma():
    mean, sigma = aggregate([0.0, 16.7, 33.3])
    assert mean == 16.7
    assert sigma == pytest.approx(13.6, abs=0.05)
    assert sigma == round(statistics.pstdev([0.0, 16.7, 33.3]), 1)


def test_aggregate_sample_sigma_switch():
    _, sigma = aggregate([0.0, 16.7, 33.3], sample=True)
    assert sigma == round(statistics.stdev([0.0, 16.7, 33.3]), 1)


def test_aggregate_single_and_empty():
    assert aggregate([40.0]) == (40.0, 0.0)
    with pytest.raises(ValueError):
        aggregate([])


def test_average_over_eight_scenarios():
    cells = [compute_ber(3, 12), 0.0, 0.0, 0.0, compute_ber(2, 12), 0.0, 0.0, compute_ber(5, 15)]
    assert aggregate(cells)[0] == 9.4


@given(st.integers(1, 500).flatmap(lambda total: st.tuples(st.integers(0, total), st.just(total))))
def test_ber_bounds_and_rounding(pair):
    passing, total = pair
    value = compute_ber(passing, total)
    assert 0.0 <= value <= 100.0
    assert abs(value - 100 * passing / total) <= 0.05 + 1e-9
