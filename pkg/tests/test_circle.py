import sys
from fractions import Fraction
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from recurrence.domain.circle import (  # noqa: E402
    MASK,
    SCALE,
    CirclePoint,
    circular_distance,
    continued_fraction,
    orbit_ticks,
    quadratic_fraction,
    radius_ticks,
)


def test_addition_wraps_around():
    assert CirclePoint(MASK) + CirclePoint(1) == CirclePoint(0)
    assert CirclePoint(0) - CirclePoint(1) == CirclePoint(MASK)


def test_times_accepts_negative_multiples():
    assert CirclePoint(5).times(-1) == CirclePoint(SCALE - 5)
    assert CirclePoint(5).times(3) == CirclePoint(15)


def test_point_rejects_out_of_range():
    with pytest.raises(ValueError):
        CirclePoint(SCALE)
    with pytest.raises(ValueError):
        CirclePoint(-1)


def test_distance_is_exact_and_circular():
    a = CirclePoint.from_fraction(Fraction(1, 8))
    b = CirclePoint.from_fraction(Fraction(7, 8))
    assert a.distance(b) == Fraction(1, 4)
    assert b.distance(a) == Fraction(1, 4)
    assert a.distance(a) == 0


def test_from_fraction_reduces_mod_one():
    assert CirclePoint.from_fraction(Fraction(5, 4)) == CirclePoint(SCALE // 4)


def test_radius_ticks_is_strict_and_capped():
    assert radius_ticks(0.5) == SCALE // 2
    assert radius_ticks(1.0) == SCALE // 2 + 1
    # anything strictly below a quarter turn, but not the quarter itself
    quarter = SCALE // 4
    assert quarter - 1 < radius_ticks(0.25)
    assert not quarter < radius_ticks(0.25)


def test_orbit_ticks_matches_scalar_arithmetic():
    step = quadratic_fraction(-1, 1, 5, 2).frac
    ticks = orbit_ticks(3, step, 0, 50)
    for k, value in enumerate(ticks):
        expected = CirclePoint(3) + CirclePoint(step).times(k)
        assert int(value) == expected.frac


def test_quadratic_fraction_golden_conjugate():
    golden = quadratic_fraction(-1, 1, 5, 2)
    assert golden.to_float() == pytest.approx(0.6180339887498949, abs=1e-15)


def test_continued_fraction_of_rational_stops():
    assert continued_fraction(Fraction(355, 113)) == (3, 7, 16)


def test_continued_fraction_of_golden_is_all_ones():
    golden = quadratic_fraction(-1, 1, 5, 2).to_fraction()
    assert continued_fraction(golden, 12)[1:] == (1,) * 11


def test_circular_distance_of_floats():
    assert circular_distance(0.95, 0.05) == pytest.approx(0.1)
    assert circular_distance(0.2, 0.2) == 0.0
