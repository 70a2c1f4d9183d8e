"""Stepsize schedules and the diminishing-stepsize validator.

Two sequences drive the surrogate recursion and the iterate update:

    rho^(t)   - surrogate averaging weight
    gamma^(t) - convex-combination weight of the subproblem solution

The convergence theory asks for rho in (0, 1] with rho -> 0 and sum rho
divergent, and additionally for gamma: sum gamma^2 < infinity and
gamma/rho -> 0. Both sequences here are of the power-decay form a / t^alpha
(or constant), so those conditions reduce to p-series tests on the exponents,
which is exactly what `validate_pair` evaluates; nothing is checked
numerically. The bundled experiment presets deliberately use equal exponents
for rho and gamma, which fails the ratio condition, so the validator reports
and never blocks (the CLI has a strict flag for callers who want hard errors).
"""

from __future__ import annotations

from dataclasses import dataclass, field

POWER_DECAY = "power-decay"
CONSTANT = "constant"


@dataclass(frozen=True)
class StepsizeSchedule:
    """value(t) = a / t^alpha for power-decay, a for constant; t >= 1."""

    a: float
    alpha: float = 0.0
    kind: str = POWER_DECAY

    def __post_init__(self):
        if self.kind not in (POWER_DECAY, CONSTANT):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.a > 0.0:
            raise ValueError(f"schedule coefficient must be positive, got {self.a}")
        if self.alpha < 0.0:
            raise ValueError(f"schedule exponent must be nonnegative, got {self.alpha}")

    @property
    def exponent(self) -> float:
        """Effective decay exponent (0 for constant schedules)."""
        return 0.0 if self.kind == CONSTANT else self.alpha

    def value(self, t: int) -> float:
        if t < 1:
            raise ValueError(f"round index starts at 1, got {t}")
        v = self.a if self.kind == CONSTANT else self.a / float(t) ** self.alpha
        if not 0.0 < v <= 1.0:
            raise ValueError(f"stepsize {v} at t={t} is outside (0, 1]")
        return v


def power_decay(a: float, alpha: float) -> StepsizeSchedule:
    return StepsizeSchedule(a=a, alpha=alpha, kind=POWER_DECAY)


def constant(a: float) -> StepsizeSchedule:
    return StepsizeSchedule(a=a, kind=CONSTANT)


@dataclass
class ScheduleValidityReport:
    rho_ok: bool
    gamma_square_summable: bool
    gamma_over_rho_vanishes: bool
    notes: list[str] = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return self.rho_ok and self.gamma_square_summable and self.gamma_over_rho_vanishes


def validate_pair(rho: StepsizeSchedule, gamma: StepsizeSchedule) -> ScheduleValidityReport:
    """Analytic check of the diminishing-stepsize conditions; report-only.

    rho needs 0 < rho^(t) <= 1, rho -> 0 and a divergent sum: coefficient in
    (0, 1] and exponent in (0, 1]. gamma additionally needs a summable square
    (exponent > 1/2) and gamma/rho -> 0 (strictly larger exponent than rho).
    """
    notes: list[str] = []

    a_rho, e_rho = rho.a, rho.exponent
    rho_ok = 0.0 < a_rho <= 1.0 and 0.0 < e_rho <= 1.0
    if not 0.0 < a_rho <= 1.0:
        notes.append(f"rho coefficient {a_rho} is outside (0, 1]")
    if e_rho == 0.0:
        notes.append("rho is constant and never vanishes")
    elif e_rho > 1.0:
        notes.append(f"sum of rho converges (exponent {e_rho} > 1), but it must diverge")

    e_gamma = gamma.exponent
    gamma_square_summable = 2.0 * e_gamma > 1.0
    if not gamma_square_summable:
        notes.append(f"sum of gamma^2 diverges: exponent {e_gamma} <= 1/2")

    gamma_over_rho_vanishes = e_gamma > e_rho
    if not gamma_over_rho_vanishes:
        notes.append(f"gamma/rho does not vanish: gamma exponent {e_gamma} <= rho exponent {e_rho}")

    return ScheduleValidityReport(rho_ok, gamma_square_summable, gamma_over_rho_vanishes, notes)
