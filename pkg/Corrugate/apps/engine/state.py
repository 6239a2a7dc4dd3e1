import logging
import math
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from apps.decompose.basis import torus_basis
from apps.decompose.conformal import conformal_factorize
from apps.decompose.decomposition import nash_decompose, sup_spectral
from apps.grid.fields import MetricField, PeriodicField
from apps.grid.operators import derivative_array, gram, hessian, jacobian, pointwise_norm, product_embedding
from apps.step.corrugate import Phase, StepInput, apply_step
from utils.config import get_setting

logger = logging.getLogger(__name__)

# ρ₀ = SHORTNESS_FRACTION · A₀^{−β} when no ε is given.
SHORTNESS_FRACTION = 0.85

BOUNDS = ("curvature", "rho", "h", "rho_gradient", "h_gradient")


@dataclass
class AdaptedShortState:
    """u with g − ∇uᵀ∇u = ρ²(g + h) and the growth bounds tied to (θ, β, α, A)."""

    u: PeriodicField
    rho: PeriodicField
    h: MetricField
    g: MetricField
    theta: float
    beta: float
    alpha: float
    A: float
    top_frequency: float = 1.0

    @property
    def n(self):
        return self.u.n

    def defect(self):
        """‖g − ∇uᵀ∇u‖₀."""
        return sup_spectral(self.g.matrices() - gram(jacobian(self.u)))

    def identity_residual(self):
        """Relative residual of g − ∇uᵀ∇u = ρ²(g + h)."""
        r2 = self.rho.scalar() ** 2
        rhs = r2[..., None, None] * (self.g + self.h).matrices()
        lhs = self.g.matrices() - gram(jacobian(self.u))
        return sup_spectral(lhs - rhs) / self.g.sup_norm()

    def bound_ratios(self):
        """max over nodes of value/bound for each growth bound; below 1 means it holds."""
        theta, alpha, A = self.theta, self.alpha, self.A
        r = self.rho.scalar()
        if np.any(r <= 0.0):
            node = tuple(int(i) for i in np.argwhere(r <= 0.0)[0])
            raise ValidationError(f"ρ vanishes at node {node}", code="rho_positive")
        n, h = self.n, self.u.spacing
        growth = A * r ** (1.0 - 1.0 / theta)
        curvature = np.sqrt(np.sum(hessian(self.u) ** 2, axis=(-3, -2, -1)))
        h_size = pointwise_norm(self.h.values, metric=True, n=n)
        rho_grad = np.sqrt(sum(derivative_array(r, i, 1, h) ** 2 for i in range(n)))
        h_grad = np.max(
            [pointwise_norm(derivative_array(self.h.values, i, 1, h), metric=True, n=n) for i in range(n)],
            axis=0,
        )
        return {
            "curvature": float(np.max(curvature / growth)),
            "rho": float(np.max(r)) / A ** (-self.beta),
            "h": float(np.max(h_size / (A ** (-alpha * theta) * r**alpha))),
            "rho_gradient": float(np.max(rho_grad / growth)),
            "h_gradient": float(np.max(h_grad / (A ** (1.0 - alpha * theta) * r ** (alpha - 1.0 / theta)))),
        }

    def margins(self):
        return {name: 1.0 - ratio for name, ratio in self.bound_ratios().items()}

    def check(self, tol=1e-8):
        """Raise on the first violated growth bound, or when the identity fails."""
        residual = self.identity_residual()
        if residual > tol:
            raise ValidationError(
                "adapted short identity violated", code="adapted_identity", params={"residual": residual}
            )
        ratios = self.bound_ratios()
        for name in BOUNDS:
            ratio = ratios[name]
            if ratio > 1.0 + 1e-12:
                raise ValidationError(
                    f"adapted short bound violated: {name}",
                    code="adapted_bound",
                    params={"bound": name, "ratio": ratio},
                )
        return True

    def as_row(self):
        row = {"defect": self.defect(), "identity_residual": self.identity_residual()}
        row.update({f"margin_{name}": value for name, value in self.margins().items()})
        return row


def _is_identity(g):
    eye = np.broadcast_to(np.eye(g.n), g.node_shape + (g.n, g.n))
    return np.array_equal(g.matrices(), eye)


def initial_short(g, A0, alpha, beta, theta, epsilon=None, frequency=None, accuracy=None):
    """A first adapted short immersion for the metric g on Tⁿ.

    For g = Id the scaled product of circles is used directly. Otherwise the
    gap g − ε²Id − δg is filled by one pass of corrugations and the leftover
    error is absorbed into h.
    """
    if _is_identity(g):
        state = _flat_start(g, A0, alpha, beta, theta, epsilon)
    else:
        state = _near_flat_start(g, A0, alpha, beta, theta, epsilon, frequency, accuracy)
    state.check()
    logger.info(
        "initial short map: ρ₀=%.4g, defect %.4g, margins %s",
        float(state.rho.values.max()), state.defect(),
        ", ".join(f"{k}={v:.2f}" for k, v in state.margins().items()),
    )
    return state


def _check_rho(rho):
    rho_min = get_setting("RHO_MIN", 1e-3)
    if rho < rho_min:
        raise ValidationError(
            "shortness margin below ρ_min", code="rho_min", params={"rho": rho, "rho_min": rho_min}
        )


def _flat_start(g, A0, alpha, beta, theta, epsilon):
    n, resolution = g.n, g.resolution
    if epsilon is None:
        rho = SHORTNESS_FRACTION * A0 ** (-beta)
        epsilon = math.sqrt(1.0 - rho**2)
    if not 0.0 < epsilon < 1.0:
        raise ValidationError("ε must lie in (0, 1)", code="epsilon_range", params={"epsilon": epsilon})
    rho = math.sqrt(1.0 - epsilon**2)
    _check_rho(rho)
    return AdaptedShortState(
        u=product_embedding(n, resolution, epsilon),
        rho=PeriodicField.constant(rho, n, resolution),
        h=MetricField.zeros(n, resolution),
        g=g,
        theta=theta,
        beta=beta,
        alpha=alpha,
        A=A0,
    )


def _near_flat_start(g, A0, alpha, beta, theta, epsilon, frequency, accuracy):
    n, resolution = g.n, g.resolution
    rho = SHORTNESS_FRACTION * A0 ** (-beta)
    _check_rho(rho)
    delta = rho**2
    if epsilon is None:
        epsilon = math.sqrt((1.0 - 2.0 * delta) * g.eigenvalue_bounds()[0])
    frequency = int(frequency or resolution)
    u0 = product_embedding(n, resolution, epsilon)
    j0 = jacobian(u0, accuracy)
    gap = MetricField.from_matrices((1.0 - delta) * g.matrices() - gram(j0), period=g.period)
    if gap.eigenvalue_bounds()[0] <= 0.0:
        raise ValidationError("metric not strictly above the seed", code="not_short")

    passed = _conformal_pass(u0, gap, frequency, accuracy) if n == 2 else None
    u, top = passed if passed is not None else _primitive_pass(u0, gap, frequency, accuracy)
    error = gram(jacobian(u, accuracy)) - gram(j0) - gap.matrices()
    return AdaptedShortState(
        u=u,
        rho=PeriodicField.constant(rho, n, resolution),
        h=MetricField.from_matrices(-error / delta, period=g.period),
        g=g,
        theta=theta,
        beta=beta,
        alpha=alpha,
        A=A0,
        top_frequency=float(top),
    )


def _conformal_pass(u0, gap, frequency, accuracy):
    try:
        fact = conformal_factorize(gap, accuracy=accuracy)
    except ValidationError as exc:
        if exc.code != "conformal_range":
            raise
        logger.info("gap metric not near conformally flat; using the primitive decomposition")
        return None
    phases = [
        Phase(np.round(frequency * fact.slopes[i]) / frequency, fact.corrections.component(i)) for i in range(2)
    ]
    v, _ = apply_step(StepInput(u0, [fact.a, fact.a], phases, frequency, accuracy=accuracy), measure_c1=False)
    return v, frequency * float(np.abs(fact.gradients).max())


def _primitive_pass(u0, gap, frequency, accuracy):
    """Chunks of n primitives at frequencies Λ, 2Λ, 4Λ, …"""
    n = u0.n
    basis = torus_basis(n)
    amplitudes = nash_decompose(gap, basis)
    u = u0
    for start in range(0, basis.size, n):
        chunk = range(start, min(start + n, basis.size))
        mu = frequency * 2 ** (start // n)
        amps = [
            PeriodicField(amplitudes[k].values / float(np.linalg.norm(basis.lattice[k])), period=u0.period)
            for k in chunk
        ]
        phases = [Phase.linear(basis.lattice[k]) for k in chunk]
        u, _ = apply_step(StepInput(u, amps, phases, mu, accuracy=accuracy), measure_c1=False)
    return u, mu * float(np.abs(basis.lattice).max())
