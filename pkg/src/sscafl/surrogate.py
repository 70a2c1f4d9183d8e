"""Recursively averaged quadratic surrogates.

The server approximates the (stochastic) objective and each constraint by a
strongly convex quadratic

    F(w) ~ constant + <linear, w> + tau * |w|^2

whose coefficients are convex combinations of their previous value and a fresh
mini-batch estimate:

    linear   <- (1 - rho_t) * linear   + rho_t * (batch_avg_grad - 2 tau w_t)
    constant <- (1 - rho_t) * constant + rho_t * (batch_avg_value
                                                  - <batch_avg_grad, w_t>
                                                  + tau |w_t|^2)

The constant recursion only applies to constraints; the objective keeps
constant = 0 because only its minimizer matters. At rho = 1 the update is a
full replacement, after which the surrogate agrees with the batch estimate at
the expansion point in both value and gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class QuadraticSurrogate:
    constant: float
    linear: np.ndarray
    tau: float

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float)
        if self.linear.ndim != 1:
            raise ValueError(f"linear coefficient must be a vector, got shape {self.linear.shape}")
        if not self.tau > 0.0:
            raise ValueError(f"curvature tau must be positive, got {self.tau}")
        if not (np.isfinite(self.constant) and np.all(np.isfinite(self.linear))):
            raise ValueError("surrogate coefficients must be finite")

    def _check(self, omega: np.ndarray) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        if omega.shape != self.linear.shape:
            raise ValueError(f"omega shape {omega.shape} does not match coefficient shape {self.linear.shape}")
        return omega

    def value(self, omega: np.ndarray) -> float:
        omega = self._check(omega)
        return float(self.constant + self.linear @ omega + self.tau * (omega @ omega))

    def grad(self, omega: np.ndarray) -> np.ndarray:
        omega = self._check(omega)
        return self.linear + 2.0 * self.tau * omega


@dataclass
class SurrogateBank:
    """Per-round surrogate state owned by the server: objective + M constraints."""

    objective: QuadraticSurrogate
    constraints: list[QuadraticSurrogate] = field(default_factory=list)
    round: int = 0

    @classmethod
    def zeros(cls, d: int, tau: float, m_constraints: int = 0) -> "SurrogateBank":
        return cls(
            objective=QuadraticSurrogate(0.0, np.zeros(d), tau),
            constraints=[QuadraticSurrogate(0.0, np.zeros(d), tau) for _ in range(m_constraints)],
        )


def _check_rho(rho_t: float) -> float:
    if not 0.0 < rho_t <= 1.0:
        raise ValueError(f"rho must be in (0, 1], got {rho_t}")
    return float(rho_t)


def accumulate_objective(
    bank: SurrogateBank, rho_t: float, omega_t: np.ndarray, batch_avg_grad: np.ndarray
) -> SurrogateBank:
    """Fold one round's weighted batch-average gradient into the objective surrogate."""
    rho_t = _check_rho(rho_t)
    obj = bank.objective
    omega_t = obj._check(omega_t)
    batch_avg_grad = obj._check(batch_avg_grad)
    obj.linear = (1.0 - rho_t) * obj.linear + rho_t * (batch_avg_grad - 2.0 * obj.tau * omega_t)
    return bank


def accumulate_constraint(
    bank: SurrogateBank,
    m: int,
    rho_t: float,
    omega_t: np.ndarray,
    batch_avg_value: float,
    batch_avg_grad: np.ndarray,
) -> SurrogateBank:
    """Fold one round's batch-average (value, gradient) into constraint m."""
    rho_t = _check_rho(rho_t)
    if not 0 <= m < len(bank.constraints):
        raise ValueError(f"constraint index {m} out of range for {len(bank.constraints)} constraints")
    con = bank.constraints[m]
    omega_t = con._check(omega_t)
    batch_avg_grad = con._check(batch_avg_grad)
    tau = con.tau
    con.constant = (1.0 - rho_t) * con.constant + rho_t * (
        float(batch_avg_value) - float(batch_avg_grad @ omega_t) + tau * float(omega_t @ omega_t)
    )
    con.linear = (1.0 - rho_t) * con.linear + rho_t * (batch_avg_grad - 2.0 * tau * omega_t)
    return bank
