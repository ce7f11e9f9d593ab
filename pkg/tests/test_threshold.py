from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from app.core.exceptions import DomainError
from app.schemas.threshold import ThresholdRequest
from app.services.threshold import (
    BOUNDARY, FeasibilityPoint, e_max_scan, ec_star, f_value, f_value_exact, in_region, iff_scan,
    write_frontier_csv,
)

def test_f_at_the_minimiser_for_n2():
    # f(e_b, e_c*, 0) = delta^2 / (1 + delta)^2 with delta = 1/2 - e_b
    for e_b in (Fraction(0), Fraction(1, 10), Fraction(2, 5), Fraction(49, 100)):
        star = Fraction(4, 2 * (3 - 2 * e_b))
        assert float(star) == pytest.approx(ec_star(e_b, 2))
        delta = Fraction(1, 2) - e_b
        assert f_value_exact(FeasibilityPoint(e_b, star, 0, 2)) == delta ** 2 / (1 + delta) ** 2

def test_f_vanishes_at_half():
    for n in (2, 3, 4):
        p = FeasibilityPoint(Fraction(1, 2), 1, 0, n)
        assert f_value_exact(p) == 0
        assert f_value(p) == 0

def test_in_region():
    assert in_region(FeasibilityPoint(0, 1, 0, 2))
    assert not in_region(FeasibilityPoint(Fraction(1, 2), 1, 0, 2))
    assert not in_region(FeasibilityPoint(Fraction(2, 5), Fraction(1, 2), 0, 2))

def test_point_validation():
    with pytest.raises(DomainError):
        FeasibilityPoint(1.5, 1, 0, 2)
    with pytest.raises(DomainError):
        FeasibilityPoint(0.1, 1, 0, 1)
    with pytest.raises(DomainError):
        ec_star(0.1, 1)

@pytest.mark.parametrize("n", [2, 3, 4])
def test_e_max_is_one_half(n):
    summary, rows = e_max_scan(n, grid=1000)
    assert 0.499 <= summary.e_max <= 0.5
    assert summary.certified < summary.e_max
    assert summary.violations_below_half == 0
    assert summary.limit_status == BOUNDARY
    assert summary.resolution == pytest.approx(0.5 / 999)
    assert all(ok for e_b, _, ok in rows if e_b <= 0.499)
    assert all(not ok for e_b, _, ok in rows if e_b > 0.5)

def test_scan_is_thread_independent():
    one, rows_one = e_max_scan(2, grid=1000, threads=1)
    two, rows_two = e_max_scan(2, grid=1000, threads=3)
    assert one == two
    assert rows_one == rows_two

@settings(max_examples=300, deadline=None)
@given(st.integers(2, 4), st.integers(0, 499), st.integers(1, 1000), st.integers(0, 100))
def test_e11_never_lowers_f_inside_the_region(n, eb_milli, t_milli, s_percent):
    N = 1 << n
    e_b, t, s = Fraction(eb_milli, 1000), Fraction(t_milli, 1000), Fraction(s_percent, 100)
    c = Fraction(N - 1, N - 2)
    low = (c - Fraction(1, 2)) / (c - e_b)
    e_c = low + (1 - low) * t
    e11_max = min(e_b * e_c, (1 - e_c) / (N - 2))
    at_zero = FeasibilityPoint(e_b, e_c, 0, n)
    assert in_region(at_zero)
    assert f_value_exact(at_zero) > 0
    assert f_value_exact(FeasibilityPoint(e_b, e_c, s * e11_max, n)) >= f_value_exact(at_zero)

@settings(max_examples=5, deadline=None)
@given(st.lists(st.sampled_from([1000, 1100, 1300, 1600]), min_size=2, max_size=2, unique=True))
def test_certified_threshold_grows_with_the_grid(grids):
    coarse, fine = (e_max_scan(2, grid=g)[0] for g in sorted(grids))
    assert coarse.e_max == fine.e_max == 0.5
    assert coarse.certified <= fine.certified < 0.5

def test_scan_rejects_coarse_grid():
    with pytest.raises(DomainError):
        e_max_scan(2, grid=500)
    with pytest.raises(ValidationError):
        ThresholdRequest(n=2, grid=500)

@pytest.mark.parametrize("n", [2, 3, 4])
def test_iff_scan(n):
    result = iff_scan(n, points=10_000)
    assert result.passed
    assert result.positive_below_half == result.below_half == 9_999
    assert result.at_half == 0
    assert result.min_below_half > 0

def test_frontier_csv(tmp_path):
    _, rows = e_max_scan(2, grid=1000)
    path = tmp_path / "frontier.csv"
    write_frontier_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "e_b,min_f,feasible"
    assert len(lines) == len(rows) + 1
    assert lines[1].startswith("0.000000000,")
