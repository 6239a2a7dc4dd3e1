import logging
import math
from dataclasses import dataclass, field

import numpy as np
from django.core.exceptions import ValidationError

from apps.corrugation.profile import default_profile
from apps.frames.normals import normal_frame
from apps.grid.fields import MetricField, PeriodicField, TWO_PI, coordinate_grid
from apps.grid.operators import (
    gradient_array,
    gram,
    hessian,
    holder_norms,
    injectivity_margin,
    jacobian,
    jet_norms,
    mollify,
    pointwise_norm,
)
from utils.config import get_setting

logger = logging.getLogger(__name__)

OVERFLOW_MESSAGE = "corrugation amplitude overflow: reduce δ or rescale"

# Absolute slack when integer frequencies meet float bounds such as λ^κ.
FREQUENCY_SLACK = 1e-9


@dataclass
class Phase:
    """Φ(x) = slope·x + correction(x) with a periodic correction."""

    slope: np.ndarray
    correction: PeriodicField = None

    def __post_init__(self):
        self.slope = np.asarray(self.slope, dtype=float)

    @classmethod
    def linear(cls, slope):
        return cls(np.asarray(slope, dtype=float))

    def check_periodic(self, mu, tol=1e-9):
        scaled = mu * self.slope
        if np.abs(scaled - np.round(scaled)).max() > tol:
            raise ValidationError(
                "phase not periodic at this frequency",
                code="phase_period",
                params={"mu": mu, "slope": self.slope.tolist()},
            )

    def values(self, n, resolution, period=TWO_PI):
        coords = coordinate_grid(n, resolution, period)
        linear = sum(self.slope[i] * coords[i] for i in range(n))
        if self.correction is None:
            return linear
        return linear + self.correction.scalar()

    def gradient(self, n, resolution, accuracy=None):
        base = np.broadcast_to(self.slope, (resolution,) * n + (n,))
        if self.correction is None:
            return base.copy()
        return base + jacobian(self.correction, accuracy)[..., 0, :]

    def hessian(self, n, resolution, accuracy=None):
        if self.correction is None:
            return np.zeros((resolution,) * n + (n, n))
        return hessian(self.correction, accuracy)[..., 0, :, :]


@dataclass
class StepInput:
    u: PeriodicField
    amplitudes: list
    phases: list
    mu: float
    M: float = None
    gamma: float = None
    delta: float = None
    nu: float = None
    nu_tilde: float = None
    columns: list = None
    accuracy: int = None

    def check_hypotheses(self):
        n, m = self.u.n, self.u.k
        if len(self.amplitudes) != len(self.phases):
            raise ValueError("one phase per amplitude")
        if len(self.amplitudes) > m - n:
            raise ValueError(f"a step adds at most {m - n} primitive metrics")
        for phase in self.phases:
            phase.check_periodic(self.mu)
        if self.nu_tilde is not None:
            c0 = get_setting("STEP_CONSTANT_C0", 1.0)
            if self.mu < c0 * self.nu_tilde - FREQUENCY_SLACK:
                self._violated("frequency", mu=self.mu, bound=c0 * self.nu_tilde)
        if self.M is None:
            return
        for a, phase in zip(self.amplitudes, self.phases):
            if self.delta is not None:
                report = holder_norms(a, accuracy=self.accuracy)
                bound = self.M * math.sqrt(self.delta)
                if report.sup_norm > bound:
                    self._violated("amplitude", value=report.sup_norm, bound=bound)
                if self.nu is not None and report.grad_sup > bound * self.nu:
                    self._violated("amplitude gradient", value=report.grad_sup, bound=bound * self.nu)
            slope = pointwise_norm(phase.gradient(self.u.n, self.u.resolution, self.accuracy))
            if slope.min() < 1.0 / self.M or slope.max() > self.M:
                self._violated("phase gradient", low=float(slope.min()), high=float(slope.max()))

    @staticmethod
    def _violated(name, **params):
        raise ValidationError(
            f"step hypothesis violated: {name}", code="step_hypothesis", params=params
        )


@dataclass
class StepReport:
    mu: float
    delta: float
    nu: float
    displacement_sup: float
    displacement_c1: float
    v_c2: float
    defect: MetricField
    defect_sup: float
    defect_c1: float
    bound_constant: float
    support_contained: bool
    orthogonality_residual: float
    tangency_residual: float
    interaction: float
    injectivity: float
    amplitude_max: float
    primitives: int = 0
    extras: dict = field(default_factory=dict)

    def as_row(self):
        return {
            "mu": self.mu,
            "delta": self.delta,
            "nu": self.nu,
            "primitives": self.primitives,
            "displacement_sup": self.displacement_sup,
            "displacement_c1": self.displacement_c1,
            "v_c2": self.v_c2,
            "defect_sup": self.defect_sup,
            "defect_c1": self.defect_c1,
            "bound_constant": self.bound_constant,
            "support_contained": self.support_contained,
            "orthogonality_residual": self.orthogonality_residual,
            "tangency_residual": self.tangency_residual,
            "interaction": self.interaction,
            "injectivity": self.injectivity,
            "amplitude_max": self.amplitude_max,
        }


def corrugation_amplitude(profile, s):
    try:
        return profile.check_range(s)
    except ValidationError as exc:
        raise ValidationError(OVERFLOW_MESSAGE, code="amplitude_overflow", params=exc.params) from exc


def apply_step(step, profile=None, measure_c1=True):
    """Add Σ a_k²∇Φ_k⊗∇Φ_k to the induced metric of u by corrugations at frequency μ.

    v = u + (1/μ) Σ_k [Γ₁(ã_k, μΦ_k) ξ_k + Γ₂(ã_k, μΦ_k) ζ_k]; its Jacobian is
    assembled by the chain rule, so the fast variable is never differenced.
    The Hessian keeps every term of order μ and 1.
    """
    step.check_hypotheses()
    profile = profile or default_profile()
    u = step.u
    n, m, resolution = u.n, u.k, u.resolution
    h = u.spacing
    acc = step.accuracy
    mu = float(step.mu)

    smooth = mollify(u, 1.0 / mu)
    frame = normal_frame(smooth, gamma=step.gamma, accuracy=acc)
    j_smooth = jacobian(smooth, acc)
    g_inverse = np.linalg.inv(gram(j_smooth))
    columns = step.columns or list(range(len(step.amplitudes)))

    j_u = jacobian(u, acc)
    h_u = hessian(u, acc)
    values = u.values.copy()
    j_v = j_u.copy()
    h_v = h_u.copy()
    target = gram(j_u)
    support = np.zeros(u.node_shape, dtype=bool)
    tangential = []
    amplitude_max = 0.0

    for a, phase, col in zip(step.amplitudes, step.phases, columns):
        grad_phi = phase.gradient(n, resolution, acc)
        hess_phi = phase.hessian(n, resolution, acc)
        xi_t = np.einsum("...ai,...ij,...j->...a", j_smooth, g_inverse, grad_phi)
        norm2 = np.sum(xi_t**2, axis=-1)
        xi = xi_t / norm2[..., None]
        zeta = frame.column(col) / np.sqrt(norm2)[..., None]
        amp = a.scalar()
        support |= amp != 0.0
        s = corrugation_amplitude(profile, np.sqrt(norm2) * amp)
        amplitude_max = max(amplitude_max, float(s.max()))
        t = np.mod(mu * phase.values(n, resolution, u.period), TWO_PI)

        g1, g2 = profile.gamma(s, t)
        p = profile.partials(s, t)
        grad_s = gradient_array(s, n, h, acc)
        grad_xi = gradient_array(xi, n, h, acc)
        grad_zeta = gradient_array(zeta, n, h, acc)

        values += (g1[..., None] * xi + g2[..., None] * zeta) / mu

        fast = p.dt[0][..., None] * xi + p.dt[1][..., None] * zeta
        slow = p.ds[0][..., None] * xi + p.ds[1][..., None] * zeta
        j_v += fast[..., :, None] * grad_phi[..., None, :]
        j_v += (
            slow[..., :, None] * grad_s[..., None, :]
            + g1[..., None, None] * grad_xi
            + g2[..., None, None] * grad_zeta
        ) / mu

        second = p.dtt[0][..., None] * xi + p.dtt[1][..., None] * zeta
        mixed = p.dsdt[0][..., None] * xi + p.dsdt[1][..., None] * zeta
        outer_phi = grad_phi[..., :, None] * grad_phi[..., None, :]
        cross_s = grad_phi[..., :, None] * grad_s[..., None, :]
        turning = p.dt[0][..., None, None] * grad_xi + p.dt[1][..., None, None] * grad_zeta
        turning = turning[..., :, :, None] * grad_phi[..., None, None, :]
        h_v += mu * second[..., :, None, None] * outer_phi[..., None, :, :]
        h_v += fast[..., :, None, None] * hess_phi[..., None, :, :]
        h_v += mixed[..., :, None, None] * (cross_s + np.swapaxes(cross_s, -1, -2))[..., None, :, :]
        h_v += turning + np.swapaxes(turning, -1, -2)

        target += (amp**2)[..., None, None] * outer_phi
        tangential.append((p.dt[0], xi, grad_phi))

    v = PeriodicField(values, jacobian=j_v, hessian=0.5 * (h_v + np.swapaxes(h_v, -1, -2)), period=u.period)
    defect = MetricField.from_matrices(gram(j_v) - target, period=u.period)
    displacement = PeriodicField(values - u.values, j_v - j_u, v.hessian - h_u, u.period)
    report = _report(step, displacement, v, frame, defect, support, tangential, amplitude_max, measure_c1)
    logger.debug(
        "step μ=%g with %d primitives: ‖D‖₀=%.3e, max ã=%.3f",
        mu, len(step.amplitudes), report.defect_sup, amplitude_max,
    )
    return v, report


def _report(step, displacement, v, frame, defect, support, tangential, amplitude_max, measure_c1):
    d_sup, d_first, _ = jet_norms(displacement)
    v_sup, v_first, v_second = jet_norms(v)
    defect_sup = defect.sup_norm()
    defect_c1 = holder_norms(defect, accuracy=step.accuracy).grad_sup if measure_c1 else float("nan")
    moved = pointwise_norm(displacement.values) != 0.0
    contained = bool(not np.any(moved & ~support))

    ortho = 0.0
    interaction = 0.0
    for k, (dt1_k, xi_k, grad_k) in enumerate(tangential):
        scale = pointwise_norm(xi_k)
        for col in range(frame.rank):
            overlap = np.abs(np.sum(xi_k * frame.column(col), axis=-1)) / scale
            ortho = max(ortho, float(overlap.max()))
        for dt1_i, xi_i, grad_i in tangential:
            term = np.abs(dt1_k * dt1_i * np.sum(xi_k * xi_i, axis=-1))
            term = term * pointwise_norm(grad_k) * pointwise_norm(grad_i)
            interaction = max(interaction, float(term.max()))

    bound = float("nan")
    if step.delta is not None and step.nu is not None:
        bound = defect_sup / (step.delta * step.nu / step.mu + step.delta**2)
    return StepReport(
        mu=float(step.mu),
        delta=step.delta,
        nu=step.nu,
        displacement_sup=d_sup,
        displacement_c1=d_sup + d_first,
        v_c2=v_sup + v_first + v_second,
        defect=defect,
        defect_sup=defect_sup,
        defect_c1=defect_c1,
        bound_constant=bound,
        support_contained=contained,
        orthogonality_residual=ortho,
        tangency_residual=frame.tangency_residual,
        interaction=interaction,
        injectivity=injectivity_margin(v),
        amplitude_max=amplitude_max,
        primitives=len(step.amplitudes),
    )
