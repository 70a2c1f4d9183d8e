"""Recursive quadratic surrogate state: recursions, evaluation, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sscafl.numerics import SeededRng
from sscafl.surrogate import (
    QuadraticSurrogate,
    SurrogateBank,
    accumulate_constraint,
    accumulate_objective,
)


def test_zero_bank_at_round_zero():
    bank = SurrogateBank.zeros(d=4, tau=0.2, m_constraints=2)
    assert bank.round == 0
    assert np.array_equal(bank.objective.linear, np.zeros(4))
    assert bank.objective.constant == 0.0
    for c in bank.constraints:
        assert np.array_equal(c.linear, np.zeros(4))
        assert c.constant == 0.0


def test_tau_must_be_positive():
    with pytest.raises(ValueError):
        QuadraticSurrogate(constant=0.0, linear=np.zeros(2), tau=0.0)


def test_eval_zero_surrogate_is_curvature_term():
    s = QuadraticSurrogate(0.0, np.zeros(3), tau=0.2)
    w = np.array([1.0, 2.0, -1.0])
    assert s.value(w) == pytest.approx(0.2 * 6.0)


def test_eval_arithmetic():
    s = QuadraticSurrogate(0.0, np.array([1.0, -2.0]), tau=0.5)
    assert s.value(np.array([1.0, 1.0])) == pytest.approx(0.0)


def test_eval_shape_mismatch():
    s = QuadraticSurrogate(0.0, np.zeros(3), tau=0.5)
    with pytest.raises(ValueError):
        s.value(np.zeros(4))


def test_minimizer_beats_random_probes():
    rng = SeededRng(5).gen
    s = QuadraticSurrogate(0.3, rng.normal(size=6), tau=0.7)
    w_star = -s.linear / (2.0 * s.tau)
    best = s.value(w_star)
    for _ in range(100):
        assert best <= s.value(w_star + rng.normal(size=6))


def test_full_replacement_at_rho_one():
    bank = SurrogateBank.zeros(3, tau=0.2)
    # seed some history first
    accumulate_objective(bank, 0.5, np.ones(3), np.full(3, 2.0))
    w = np.array([1.0, -1.0, 0.5])
    g = np.array([0.2, 0.4, 0.6])
    accumulate_objective(bank, 1.0, w, g)
    assert np.allclose(bank.objective.linear, g - 2 * 0.2 * w, atol=1e-15)


def test_first_round_direct_recursion():
    bank = SurrogateBank.zeros(2, tau=0.2)
    accumulate_objective(bank, 0.9, np.zeros(2), np.ones(2))
    assert np.allclose(bank.objective.linear, [0.9, 0.9])


def test_constant_input_fixed_point():
    # feeding the same term G forever drives linear to G (checked at t=1e4)
    bank = SurrogateBank.zeros(2, tau=0.3)
    g_term = np.array([1.5, -0.7])  # this is grad - 2 tau omega with omega = 0
    for t in range(1, 10_001):
        accumulate_objective(bank, 0.9 / t**0.1, np.zeros(2), g_term)
    assert np.allclose(bank.objective.linear, g_term, atol=1e-3)


def test_rho_out_of_range_rejected():
    bank = SurrogateBank.zeros(2, tau=0.2)
    for rho in (0.0, 1.2, -0.1):
        with pytest.raises(ValueError):
            accumulate_objective(bank, rho, np.zeros(2), np.zeros(2))


def test_objective_dimension_mismatch():
    bank = SurrogateBank.zeros(2, tau=0.2)
    with pytest.raises(ValueError):
        accumulate_objective(bank, 0.5, np.zeros(2), np.zeros(3))


def test_constraint_full_replacement_zero_expansion():
    bank = SurrogateBank.zeros(2, tau=0.2, m_constraints=1)
    g = np.array([0.3, 0.4])
    accumulate_constraint(bank, 0, 1.0, np.zeros(2), 0.7, g)
    assert bank.constraints[0].constant == pytest.approx(0.7)
    assert np.allclose(bank.constraints[0].linear, g)


def test_constraint_zero_inputs_stay_zero():
    bank = SurrogateBank.zeros(2, tau=0.2, m_constraints=1)
    for _ in range(5):
        accumulate_constraint(bank, 0, 0.5, np.zeros(2), 0.0, np.zeros(2))
    assert bank.constraints[0].constant == 0.0
    assert np.array_equal(bank.constraints[0].linear, np.zeros(2))


def test_constraint_index_out_of_range():
    bank = SurrogateBank.zeros(2, tau=0.2, m_constraints=1)
    with pytest.raises(ValueError):
        accumulate_constraint(bank, 1, 0.5, np.zeros(2), 0.0, np.zeros(2))


def test_rho_one_update_reproduces_batch_value_at_expansion_point():
    # after a full-replacement update the constraint surrogate evaluated at the
    # expansion point returns the batch value exactly
    rng = SeededRng(17).gen
    bank = SurrogateBank.zeros(5, tau=0.4, m_constraints=1)
    w = rng.normal(size=5)
    val = 1.3
    grad = rng.normal(size=5)
    accumulate_constraint(bank, 0, 1.0, w, val, grad)
    assert bank.constraints[0].value(w) == pytest.approx(val, abs=1e-12)


def test_gradient_consistency_single_sample():
    # rho=1 single-sample update: surrogate gradient at the expansion point
    # equals that sample's gradient to 1e-10
    rng = SeededRng(23).gen
    bank = SurrogateBank.zeros(6, tau=0.25)
    w = rng.normal(size=6)
    g_sample = rng.normal(size=6)
    accumulate_objective(bank, 1.0, w, g_sample)
    assert np.max(np.abs(bank.objective.grad(w) - g_sample)) <= 1e-10


def test_two_updates_match_hand_unrolled_recursion():
    rng = SeededRng(31).gen
    bank = SurrogateBank.zeros(3, tau=0.2, m_constraints=1)
    terms = [(0.9, rng.normal(size=3), 0.5, rng.normal(size=3)) for _ in range(2)]
    lin = np.zeros(3)
    const = 0.0
    for rho, w, val, grad in terms:
        accumulate_constraint(bank, 0, rho, w, val, grad)
        lin = (1 - rho) * lin + rho * (grad - 2 * 0.2 * w)
        const = (1 - rho) * const + rho * (val - grad @ w + 0.2 * (w @ w))
    assert np.allclose(bank.constraints[0].linear, lin, atol=1e-15)
    assert bank.constraints[0].constant == pytest.approx(const, abs=1e-15)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.floats(0.01, 1.0), st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=30))
def test_convex_combination_bound(steps):
    # |linear| never exceeds the running max of the |input term|
    bank = SurrogateBank.zeros(1, tau=0.5)
    running_max = 0.0
    for rho, w, g in steps:
        accumulate_objective(bank, rho, np.array([w]), np.array([g]))
        running_max = max(running_max, abs(g - 2 * 0.5 * w))
        assert abs(bank.objective.linear[0]) <= running_max + 1e-12


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_strong_convexity_identity(seed):
    # exact for quadratics: f(w') = f(w) + <grad f(w), w'-w> + tau |w'-w|^2
    rng = SeededRng(seed).gen
    s = QuadraticSurrogate(float(rng.normal()), rng.normal(size=4), tau=0.3)
    w, w2 = rng.normal(size=4), rng.normal(size=4)
    lhs = s.value(w2)
    rhs = s.value(w) + s.grad(w) @ (w2 - w) + 0.3 * ((w2 - w) @ (w2 - w))
    assert lhs == pytest.approx(rhs, abs=1e-9)
