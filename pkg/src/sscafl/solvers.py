"""Per-round subproblem solvers.

Three routes to the same family of convex subproblems:

* `solve_unconstrained`: the quadratic surrogate minimum, -linear / (2 tau).
* `solve_penalized_ball`: closed form for the single-constraint penalized
  problem  min |w|^2 + penalty * s  s.t.  <a, w> + tau |w|^2 + constant
  - ubound <= s, s >= 0. With b = |a|^2, the optimal dual is

      nu = clamp((1/tau) (sqrt(b / (b + 4 tau (ubound - constant))) - 1), 0, penalty)

  when b + 4 tau (ubound - constant) > 0, and nu = penalty otherwise; then
  w = -nu a / (2 (1 + nu tau)).
* `solve_qcqp_barrier`: log-barrier path following with damped Newton inner
  steps, for any number of quadratic constraints. Used as the general route
  and as an independent cross-check of the closed form.

`dual_bisection_oracle` maximizes the one-dimensional dual of the penalized
ball problem directly (the dual is concave on [0, penalty], so bisection on
its derivative finds the maximizer); it exists to validate the closed form
through a different computation path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, SolverError
from .surrogate import QuadraticSurrogate


@dataclass
class PenalizedSolveResult:
    omega_bar: np.ndarray
    s: np.ndarray  # slack per constraint, >= 0
    nu: np.ndarray  # dual per constraint, in [0, penalty]
    active: np.ndarray  # per-constraint activity flag


def solve_unconstrained(surrogate: QuadraticSurrogate) -> np.ndarray:
    return -surrogate.linear / (2.0 * surrogate.tau)


def _check_ball_inputs(a_lin, tau, constant, ubound, penalty):
    a_lin = np.asarray(a_lin, dtype=float)
    if not np.all(np.isfinite(a_lin)):
        raise NumericError("non-finite linear coefficient in penalized solve")
    for name, v in (("tau", tau), ("constant", constant), ("ubound", ubound), ("penalty", penalty)):
        if not math.isfinite(v):
            raise NumericError(f"non-finite {name} in penalized solve")
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    if penalty <= 0.0:
        raise ValueError(f"penalty must be positive, got {penalty}")
    return a_lin


def _ball_point(a_lin: np.ndarray, tau: float, nu: float) -> np.ndarray:
    return -(nu / (2.0 * (1.0 + nu * tau))) * a_lin


def _ball_slack(a_lin, tau, constant, ubound, omega) -> float:
    violation = float(a_lin @ omega + tau * (omega @ omega) + constant - ubound)
    return max(0.0, violation), violation


def solve_penalized_ball(
    a_lin: np.ndarray, tau: float, constant: float, ubound: float, penalty: float
) -> PenalizedSolveResult:
    """Closed-form solve of the single-constraint penalized norm problem."""
    a_lin = _check_ball_inputs(a_lin, tau, constant, ubound, penalty)
    b = float(a_lin @ a_lin)
    disc = b + 4.0 * tau * (ubound - constant)
    if disc > 0.0:
        nu = (math.sqrt(b / disc) - 1.0) / tau
        nu = min(max(nu, 0.0), penalty)
    else:
        nu = penalty
    omega = _ball_point(a_lin, tau, nu)
    s, violation = _ball_slack(a_lin, tau, constant, ubound, omega)
    active = nu > 0.0 or abs(violation) <= 1e-12
    return PenalizedSolveResult(omega, np.array([s]), np.array([nu]), np.array([active]))


def dual_bisection_oracle(
    a_lin: np.ndarray, tau: float, constant: float, ubound: float, penalty: float
) -> tuple[np.ndarray, float]:
    """Independent solve via bisection on the derivative of the concave dual.

    The dual is h(nu) = nu * (constant - ubound - b nu / (4 (1 + tau nu)))
    maximized over [0, penalty]; h' is strictly decreasing, so the maximizer
    is 0, penalty, or the unique root of h'.
    """
    a_lin = _check_ball_inputs(a_lin, tau, constant, ubound, penalty)
    b = float(a_lin @ a_lin)
    gap = ubound - constant

    def hprime(nu: float) -> float:
        q = (1.0 + nu * tau) ** 2
        return (b - (b + 4.0 * tau * gap) * q) / (4.0 * tau * q)

    if hprime(0.0) <= 0.0:
        nu = 0.0
    elif hprime(penalty) >= 0.0:
        nu = penalty
    else:
        lo, hi = 0.0, penalty
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if hprime(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        nu = 0.5 * (lo + hi)
    omega = _ball_point(a_lin, tau, nu)
    s, _ = _ball_slack(a_lin, tau, constant, ubound, omega)
    return omega, s


def _slack_profile(vals: np.ndarray, penalty: float, mu: float):
    """Per-constraint optimal slack of the barrier subproblem, given constraint values.

    For each constraint value F the inner problem
        min_{s > max(0, F)}  penalty*s - mu*log(s - F) - mu*log(s)
    has the closed-form solution of a quadratic; both s and the margin
    r = s - F are computed in cancellation-free forms.
    """
    pf = penalty * vals
    disc = np.hypot(pf, 2.0 * mu)
    # the rationalized forms divide by disc -+ pf, which is only safe on the
    # lane that actually uses them; pin the discarded lane's denominator to 1
    neg = pf < 0.0
    s = np.where(
        neg,
        (2.0 * mu + 4.0 * mu * mu / np.where(neg, disc - pf, 1.0)) / (2.0 * penalty),
        (pf + 2.0 * mu + disc) / (2.0 * penalty),
    )
    r = np.where(
        neg,
        (2.0 * mu + disc - pf) / (2.0 * penalty),
        (2.0 * mu + 4.0 * mu * mu / np.where(neg, 1.0, disc + pf)) / (2.0 * penalty),
    )
    return s, r


def _reduced_value(objective, constraints, penalty, mu, omega) -> float:
    vals = np.array([c.value(omega) for c in constraints])
    s, r = _slack_profile(vals, penalty, mu)
    return float(objective.value(omega) + penalty * s.sum() - mu * np.log(r).sum() - mu * np.log(s).sum())


def _center(objective, constraints, penalty, mu, omega, newton_tol, max_iter=200):
    """Newton to the analytic center, with the slack variables minimized out.

    The barrier objective is separable in the slacks given omega, so they are
    eliminated through `_slack_profile`; what remains is a smooth strongly
    convex function defined on all of R^d (no feasibility boundary in omega),
    with gradient  grad F0 + sum_m nu_m grad F_m  for nu_m = mu / r_m  and a
    d x d Hessian. This follows the exact same central path as the joint
    (omega, s) formulation but cannot get pinned against the boundary.
    """
    base_lin = np.stack([c.linear for c in constraints])
    taus = np.array([c.tau for c in constraints])
    decrement = math.inf
    for _ in range(max_iter):
        vals = np.array([c.value(omega) for c in constraints])
        s, r = _slack_profile(vals, penalty, mu)
        nu = mu / r
        nu_prime = mu / (s * s + r * r)  # d nu / d F, from the slack optimality identity
        con_grads = base_lin + 2.0 * taus[:, None] * omega[None, :]
        grad = objective.grad(omega) + nu @ con_grads
        diag_coef = 2.0 * objective.tau + 2.0 * float(taus @ nu)
        hess = diag_coef * np.eye(omega.size) + (con_grads.T * nu_prime) @ con_grads
        step = np.linalg.solve(hess, -grad)
        decrement = max(0.0, float(grad @ -step)) / 2.0
        current = _reduced_value(objective, constraints, penalty, mu, omega)
        if decrement <= newton_tol:
            # quadratic regime: land the already-computed step before returning
            cand = omega + step
            if _reduced_value(objective, constraints, penalty, mu, cand) <= current:
                omega = cand
            return omega
        slope = float(grad @ step)
        t = 1.0
        accepted = None
        for _ in range(60):
            cand = _reduced_value(objective, constraints, penalty, mu, omega + t * step)
            if cand <= current + 0.01 * t * slope:
                accepted = (t, cand)
                break
            t *= 0.5
        if accepted is None:
            raise SolverError("barrier line search stalled", residual=decrement)
        # convex along the ray: extend the step while it keeps improving
        t, best = accepted
        for _ in range(40):
            cand = _reduced_value(objective, constraints, penalty, mu, omega + 2.0 * t * step)
            if cand >= best:
                break
            t, best = 2.0 * t, cand
        omega = omega + t * step
    raise SolverError(f"Newton centering exceeded {max_iter} iterations", residual=decrement)


def solve_qcqp_barrier(
    objective: QuadraticSurrogate,
    constraints: list[QuadraticSurrogate],
    penalty: float,
    tol: float = 1e-8,
) -> PenalizedSolveResult:
    """Log-barrier solve of  min F0(w) + penalty * sum(s)  s.t.  F_m(w) <= s_m, s_m >= 0.

    Barrier weight starts at 1 and shrinks by 10x per outer stage until the
    barrier duality gap (2 M mu) is below tol; inner Newton runs to a
    decrement below tol/10, starting from w = 0 with the slacks held at the
    barrier optimum for the current iterate.
    """
    if not constraints:
        raise ValueError("need at least one constraint; use solve_unconstrained otherwise")
    if penalty <= 0.0 or tol <= 0.0:
        raise ValueError(f"penalty and tol must be positive, got {penalty}, {tol}")
    d = objective.linear.size
    for c in constraints:
        if c.linear.size != d:
            raise ValueError("objective/constraint dimension mismatch")
    m_count = len(constraints)
    omega = np.zeros(d)
    mu = 1.0
    newton_tol = tol / 10.0
    while True:
        omega = _center(objective, constraints, penalty, mu, omega, newton_tol)
        if 2.0 * m_count * mu <= tol:
            break
        mu /= 10.0
    vals = np.array([c.value(omega) for c in constraints])
    s, r = _slack_profile(vals, penalty, mu)
    nu = np.clip(mu / r, 0.0, penalty)
    # the raw mu/r dual estimate is hypersensitive to the centering residual
    # near active constraints; refit the duals of the contact set by least
    # squares against stationarity at the returned point
    contact = np.flatnonzero(nu > tol)
    if contact.size:
        grads = np.stack([constraints[m].grad(omega) for m in contact])
        fit, *_ = np.linalg.lstsq(grads.T, -objective.grad(omega), rcond=None)
        nu[contact] = np.clip(fit, 0.0, penalty)
    active = nu >= 1e-6
    return PenalizedSolveResult(omega, s, nu, active)
