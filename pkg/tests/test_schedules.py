"""Stepsize values and the analytic diminishing-condition validator."""

import pytest
from hypothesis import given, strategies as st

from sscafl.schedules import StepsizeSchedule, constant, power_decay, validate_pair


def test_power_decay_first_round_is_coefficient():
    assert power_decay(0.9, 0.1).value(1) == 0.9
    assert power_decay(0.3, 0.3).value(1) == 0.3


def test_constant_schedule():
    assert constant(0.5).value(7) == 0.5


def test_power_decay_formula():
    s = power_decay(0.9, 0.5)
    assert s.value(4) == pytest.approx(0.45)


def test_round_index_starts_at_one():
    with pytest.raises(ValueError):
        power_decay(0.9, 0.1).value(0)


def test_value_above_one_is_range_error():
    with pytest.raises(ValueError):
        power_decay(1.5, 0.5).value(1)


def test_nonpositive_coefficient_rejected():
    with pytest.raises(ValueError):
        power_decay(0.0, 0.1)
    with pytest.raises(ValueError):
        StepsizeSchedule(a=-0.1, alpha=0.1, kind="power-decay")


@given(
    a=st.floats(min_value=0.01, max_value=1.0),
    alpha=st.floats(min_value=0.01, max_value=1.0),
    t=st.integers(min_value=1, max_value=10_000),
)
def test_strictly_decreasing_when_alpha_positive(a, alpha, t):
    s = power_decay(a, alpha)
    assert s.value(t) > s.value(t + 1)


def test_equal_exponents_fail_ratio_condition():
    # same decay exponent for both: gamma/rho is constant, and exponent 0.2
    # gives a divergent square sum
    report = validate_pair(power_decay(0.9, 0.1), power_decay(0.5, 0.1))
    assert report.rho_ok
    assert not report.gamma_square_summable
    assert not report.gamma_over_rho_vanishes
    assert report.notes


def test_separated_exponents_pass_everything():
    report = validate_pair(power_decay(0.9, 0.4), power_decay(0.5, 0.6))
    assert report.rho_ok
    assert report.gamma_square_summable
    assert report.gamma_over_rho_vanishes
    assert report.all_ok


def test_constant_rho_does_not_vanish():
    report = validate_pair(constant(1.0), power_decay(0.5, 0.6))
    assert not report.rho_ok


def test_rho_exponent_above_one_breaks_divergent_sum():
    # sum rho must diverge, which needs exponent <= 1
    report = validate_pair(power_decay(0.9, 1.5), power_decay(0.5, 1.7))
    assert not report.rho_ok


def test_experiment_grid_configurations_are_flagged():
    # every bundled experiment pairing uses equal exponents, so at least one
    # flag must come out false for each of them
    grids = [
        (0.9, 0.5, 0.1),
        (0.3, 0.3, 0.1),
        (0.2, 0.3, 0.1),
        (0.9, 0.3, 0.3),
        (0.9, 0.5, 0.1),
        (0.3, 0.3, 0.1),
    ]
    for a1, a2, alpha in grids:
        report = validate_pair(power_decay(a1, alpha), power_decay(a2, alpha))
        assert not report.all_ok
