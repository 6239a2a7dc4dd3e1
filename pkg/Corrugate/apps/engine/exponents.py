import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from django.core.exceptions import ValidationError

logger = logging.getLogger(__name__)

INEQUALITIES = (
    "growth",
    "error_gradient",
    "frequency_gap",
    "sharp_growth",
    "sharp_error_gradient",
)


def theta_threshold(n):
    """θ(n) = 1/3 for n = 2 and 1/(n+2) for n ≥ 3."""
    if n < 2:
        raise ValidationError("dimension must be at least 2", code="dimension", params={"n": n})
    if n == 2:
        return Fraction(1, 3)
    return Fraction(1, n + 2)


def steps_exponent(n):
    """N = (1 − θ(n)) / (2θ(n)); not an integer for even n ≥ 4."""
    theta = theta_threshold(n)
    return (1 - theta) / (2 * theta)


def growth_exponent(theta, alpha, N):
    """b = 1 + 2Nθα / (1 − θ(1+2N))."""
    return 1.0 + 2.0 * N * theta * alpha / (1.0 - theta * (1.0 + 2.0 * N))


def stage_kappa(theta, alpha, b):
    """κ = 1 + (2θ/b)(b − 1 + α)."""
    return 1.0 + (2.0 * theta / b) * (b - 1.0 + alpha)


def c_star(theta, N):
    return (1.0 - theta * (1.0 + 2.0 * N)) / (4.0 * theta * (1.0 - theta))


@dataclass
class LedgerCase:
    n: int
    N: float
    theta: float
    alpha: float
    beta: float
    b: float
    kappa: float
    c_star: float
    theta_next: float
    alpha_next: float
    beta_next: float
    margins: dict = field(default_factory=dict)
    admissible: bool = True

    @property
    def passed(self):
        return all(margin > 0.0 for margin in self.margins.values())

    def as_row(self):
        row = {
            "n": self.n,
            "N": self.N,
            "theta": self.theta,
            "alpha": self.alpha,
            "beta": self.beta,
            "b": self.b,
            "kappa": self.kappa,
            "c_star": self.c_star,
            "theta_next": self.theta_next,
            "alpha_next": self.alpha_next,
            "beta_next": self.beta_next,
            "admissible": self.admissible,
            "passed": self.passed,
        }
        for name in INEQUALITIES:
            row[f"margin_{name}"] = self.margins[name]
        return row


def ledger_check(n, theta, alpha, beta):
    """Evaluate every exponent inequality the inductive step needs.

    Each margin is right-hand side minus left-hand side, so a positive margin
    means the strict inequality holds.
    """
    threshold = float(theta_threshold(n))
    if not 0.0 < theta < threshold:
        raise ValidationError(
            "beyond threshold exponent",
            code="threshold_exponent",
            params={"n": n, "theta": theta, "threshold": threshold},
        )
    for name, value in (("alpha", alpha), ("beta", beta)):
        if not 0.0 < value < 1.0:
            raise ValidationError(
                "exponents must lie in (0, 1)", code="exponent_range", params={name: value}
            )
    N = float(steps_exponent(n))
    b = growth_exponent(theta, alpha, N)
    kappa = stage_kappa(theta, alpha, b)
    slack = 1.0 - theta * (1.0 + 2.0 * N)

    growth = b + 2.0 * N * theta * (b - 1.0 + alpha)
    gradient = b + 2.0 * theta * N * (b - 1.0) + 2.0 * theta * (N - 1.0) * alpha
    margins = {
        "growth": b * b - growth,
        "error_gradient": b * b - theta * alpha / (2.0 * b * b) - gradient,
        "frequency_gap": b * b - (b + theta * (b - 1.0)),
        "sharp_growth": b * b - theta * (b - 1.0) - growth,
        "sharp_error_gradient": b * b - theta * alpha - gradient,
    }
    admissible = alpha < min(slack / (2.0 * (1.0 - theta)), c_star(theta, N) * beta) and kappa > 1.0
    return LedgerCase(
        n=n,
        N=N,
        theta=theta,
        alpha=alpha,
        beta=beta,
        b=b,
        kappa=kappa,
        c_star=c_star(theta, N),
        theta_next=theta / b**2,
        alpha_next=alpha / (2.0 * b**2),
        beta_next=beta / b**2,
        margins=margins,
        admissible=admissible,
    )


def ledger_sweep(n, points=20):
    """Cases on a points³ lattice of θ ∈ (0, θ(n)), β ∈ (0, 1), α ∈ (0, c*β)."""
    threshold = float(theta_threshold(n))
    N = float(steps_exponent(n))
    fractions = (np.arange(points) + 0.5) / points
    cases = []
    for t in fractions:
        theta = t * threshold
        for beta in fractions:
            top = min(c_star(theta, N) * beta, 1.0)
            for a in fractions:
                cases.append(ledger_check(n, theta, a * top, beta))
    return cases


@dataclass
class ScheduleLevel:
    theta: float
    beta: float
    alpha: float
    log_A: float
    b: float
    c_star_ok: bool

    @property
    def A(self):
        return math.exp(self.log_A)


@dataclass
class ScheduleParams:
    """Level recursion plus the δ_q, λ_q sequence of the first level.

    λ values grow doubly exponentially, so they are carried as logarithms.
    """

    n: int
    theta: float
    levels: list
    theta_final: float
    deltas: list
    log_lambdas: list
    ordering: list

    @property
    def N(self):
        return float(steps_exponent(self.n))

    @property
    def lambdas(self):
        return [math.exp(x) for x in self.log_lambdas]

    @property
    def ordering_ok(self):
        return all(self.ordering)

    def delta(self, q):
        """δ_q with q ≥ 1."""
        return self.deltas[q - 1]

    def log_lambda(self, q):
        return self.log_lambdas[q - 1]

    def as_rows(self):
        rows = []
        for q, (delta, log_lam) in enumerate(zip(self.deltas, self.log_lambdas), start=1):
            rows.append({
                "q": q,
                "delta": delta,
                "log_lambda": log_lam,
                "ordering_ok": self.ordering[q - 2] if q >= 2 else True,
            })
        return rows


def _levels(n, theta0, alpha0, beta0, A0, count):
    N = float(steps_exponent(n))
    levels = []
    theta, alpha, beta, log_A = theta0, alpha0, beta0, math.log(A0)
    for _ in range(count):
        b = growth_exponent(theta, alpha, N)
        levels.append(ScheduleLevel(theta, beta, alpha, log_A, b, alpha < c_star(theta, N) * beta or alpha == 0.0))
        theta, beta, alpha, log_A = theta / b**2, beta / b**2, alpha / (2.0 * b**2), log_A * b**2
    return levels, theta


def schedule(n, theta, theta0, alpha0, beta0, A0, levels=None, iterations=6):
    """Parameters (θ_j, β_j, α_j, A_j, b_j) of every level and the first level's δ_q, λ_q.

    Raises when the last level's Hölder exponent no longer exceeds θ.
    """
    threshold = float(theta_threshold(n))
    if not 0.0 < theta < theta0 < threshold:
        raise ValidationError(
            "beyond threshold exponent",
            code="threshold_exponent",
            params={"theta": theta, "theta0": theta0, "threshold": threshold},
        )
    if A0 < 1.0:
        raise ValidationError("A₀ must be at least 1", code="schedule_A0")
    count = levels if levels is not None else n + 1
    level_list, theta_final = _levels(n, theta0, alpha0, beta0, A0, count)
    if theta_final <= theta:
        raise ValidationError(
            "shrink α₀", code="schedule_alpha", params={"theta_final": theta_final, "theta": theta}
        )

    first = level_list[0]
    log_A = first.log_A
    deltas = [math.exp(-first.beta * log_A)]
    log_lambdas = [log_A - math.log(deltas[0]) / (2.0 * first.theta)]
    for _ in range(1, iterations):
        log_lam = log_lambdas[-1] * first.b
        log_lambdas.append(log_lam)
        deltas.append(math.exp(2.0 * first.theta * (log_A - log_lam)))
    ordering = [
        d1 <= 0.25 * d0 and l1 >= l0 + math.log(2.0)
        for d0, d1, l0, l1 in zip(deltas, deltas[1:], log_lambdas, log_lambdas[1:])
    ]
    if not all(ordering):
        logger.warning("δ/λ ordering fails at A₀=%g; the stage bounds will not telescope", A0)
    return ScheduleParams(n, theta, level_list, theta_final, deltas, log_lambdas, ordering)


def default_theta0(n, theta, alpha0, levels=None):
    """0.9·θ(n) when the level recursion from there still ends above θ, else the midpoint of (θ, θ(n))."""
    threshold = float(theta_threshold(n))
    near = 0.9 * threshold
    if theta < near:
        _, theta_final = _levels(n, near, alpha0, 0.5, 2.0, levels if levels is not None else n + 1)
        if theta_final > theta:
            return near
    return 0.5 * (theta + threshold)


def largest_admissible_alpha(n, theta, theta0, levels=None, steps=60):
    """Bisect the largest α₀ for which θ_final stays above θ."""
    count = levels if levels is not None else n + 1
    low, high = 0.0, 1.0
    for _ in range(steps):
        mid = 0.5 * (low + high)
        _, theta_final = _levels(n, theta0, mid, 0.5, 2.0, count)
        if theta_final > theta:
            low = mid
        else:
            high = mid
    logger.info("largest admissible α₀ for n=%d, θ=%s, θ₀=%s: %.6g", n, theta, theta0, low)
    return low


def rho_update(rho, chi, delta_next):
    """ρ_{q+1}² = ρ_q²(1 − χ_q²) + δ_{q+2}χ_q², nodewise."""
    rho = np.asarray(rho, dtype=float)
    chi = np.asarray(chi, dtype=float)
    return np.sqrt(rho**2 * (1.0 - chi**2) + delta_next * chi**2)
