import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from django.core.exceptions import ValidationError

from apps.decompose.basis import torus_basis
from apps.decompose.conformal import conformal_factorize
from apps.decompose.decomposition import nash_decompose, sup_spectral
from apps.engine.exponents import steps_exponent
from apps.grid.fields import MetricField, PeriodicField
from apps.grid.operators import gram, hessian, holder_norms, induced_metric, jacobian, jet_norms, mollify
from apps.step.absorption import apply_absorption_step
from apps.step.corrugate import FREQUENCY_SLACK, Phase, StepInput, apply_step
from utils.config import get_setting

logger = logging.getLogger(__name__)

BRANCHES = ("conformal", "nash", "odd", "absorption")


def default_branch(n):
    if n == 2:
        return "conformal"
    return "odd" if n % 2 else "absorption"


@dataclass
class StageParams:
    delta: float
    lam: float
    kappa: float
    n: int = 2
    alpha: float = 0.5
    gamma: float = 2.0
    branch: str = None
    accuracy: int = None
    delta_star: float = None
    lambda_star: float = None

    def __post_init__(self):
        if self.branch is None:
            self.branch = default_branch(self.n)
        self.validate()

    def validate(self):
        checks = (
            ("delta", 0.0 < self.delta < 1.0),
            ("lambda", self.lam > 1.0),
            ("kappa", self.kappa > 1.0),
            ("alpha", self.alpha > 0.0),
            ("gamma", self.gamma >= 1.0),
        )
        for name, ok in checks:
            if not ok:
                raise ValidationError(
                    f"stage parameter out of range: {name}", code="stage_params", params={"name": name}
                )
        allowed = {
            "conformal": self.n == 2,
            "nash": self.n == 2,
            "odd": self.n % 2 == 1,
            "absorption": self.n % 2 == 0,
        }
        if not allowed.get(self.branch, False):
            raise ValidationError(
                f"branch {self.branch} does not apply to n = {self.n}", code="stage_branch"
            )
        outside = (self.delta_star is not None and self.delta > self.delta_star) or (
            self.lambda_star is not None and self.lam < self.lambda_star
        )
        if outside:
            raise ValidationError(
                "stage parameters outside the calibrated admissible region",
                code="admissible_region",
                params={"delta": self.delta, "lam": self.lam},
            )

    @property
    def N(self):
        return float(steps_exponent(self.n))

    @property
    def ell(self):
        return self.lam ** (-self.kappa)

    @property
    def K(self):
        return self.lam ** (self.kappa - 1.0)

    @property
    def tau(self):
        return 0.5 * (self.kappa + 1.0)

    @property
    def omega(self):
        return int(round(self.lam**self.tau))

    @property
    def first_nu_tilde(self):
        """ν̃ of the first plain step: ℓ⁻¹ = λ^κ, or the spiral frequency ω after absorption."""
        return float(self.omega) if self.branch == "absorption" else self.lam**self.kappa

    def frequencies(self):
        """Integer frequencies of the plain steps, in order, none below the first ν̃."""
        lam, K = self.lam, self.K
        if self.branch == "conformal":
            ladder = [lam**self.kappa]
        elif self.branch == "nash":
            ladder = [lam * K, lam * K**2]
        elif self.branch == "odd":
            ladder = [lam * K**l for l in range(1, (self.n + 1) // 2 + 1)]
        else:
            ladder = [lam**self.tau * K ** (l - 1) for l in range(2, self.n // 2 + 2)]
        rounded = [math.ceil(mu - FREQUENCY_SLACK) for mu in ladder]
        too_low = rounded[0] < self.first_nu_tilde - FREQUENCY_SLACK
        if any(b <= a for a, b in zip(rounded, rounded[1:])) or too_low:
            raise ValidationError(
                "step frequencies not increasing", code="frequency_order", params={"frequencies": rounded}
            )
        return rounded

    def as_row(self):
        return {
            "n": self.n,
            "branch": self.branch,
            "delta": self.delta,
            "lam": self.lam,
            "kappa": self.kappa,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "N": self.N,
        }


@dataclass
class MollificationReport:
    ell: float
    rho_shift: float
    g_shift: float
    h_shift: float
    rho_rate: float
    g_rate: float
    h_rate: float
    rho_second: float
    g_bounds: tuple
    g_tilde_bounds: tuple

    @property
    def ellipticity_preserved(self):
        return self.g_tilde_bounds[0] >= self.g_bounds[0] - 1e-12 and self.g_tilde_bounds[1] <= self.g_bounds[1] + 1e-12

    def as_row(self):
        return {
            "ell": self.ell,
            "rho_shift": self.rho_shift,
            "g_shift": self.g_shift,
            "h_shift": self.h_shift,
            "rho_rate": self.rho_rate,
            "g_rate": self.g_rate,
            "h_rate": self.h_rate,
            "rho_second": self.rho_second,
            "ellipticity_preserved": self.ellipticity_preserved,
        }


def _rate(shift, first, ell):
    return shift / (ell * first) if first > 0.0 else 0.0


def mollify_triple(rho, G, H, ell, accuracy=None):
    """Mollify ρ, G and H at scale ℓ and measure how far each one moved.

    Rates are ‖f̃ − f‖₀ / (ℓ[f]₁), the constants in ‖f̃ − f‖₀ ≤ Cℓ[f]₁.
    """
    rho_t, G_t, H_t = mollify(rho, ell), mollify(G, ell), mollify(H, ell)
    shifts, rates = [], []
    for raw, smooth in ((rho, rho_t), (G, G_t), (H, H_t)):
        diff = smooth - raw
        shift = diff.sup_norm() if isinstance(diff, MetricField) else float(np.abs(diff.values).max())
        first = holder_norms(raw, accuracy=accuracy).first_seminorm
        shifts.append(shift)
        rates.append(_rate(shift, first, ell))
    rho_first = holder_norms(rho, accuracy=accuracy).first_seminorm
    rho_second = holder_norms(rho_t, accuracy=accuracy).second_seminorm
    report = MollificationReport(
        ell=ell,
        rho_shift=shifts[0],
        g_shift=shifts[1],
        h_shift=shifts[2],
        rho_rate=rates[0],
        g_rate=rates[1],
        h_rate=rates[2],
        rho_second=rho_second * ell / rho_first if rho_first > 0.0 else 0.0,
        g_bounds=G.eigenvalue_bounds(),
        g_tilde_bounds=G_t.eigenvalue_bounds(),
    )
    return rho_t, G_t, H_t, report


@dataclass
class StageReport:
    params: StageParams
    frequencies: list
    displacement_sup: float
    displacement_c1: float
    v_c2: float
    error_sup: float
    error_c1: float
    constants: dict
    bound_constant: float
    support_contained: bool
    mollification: MollificationReport
    steps: list = field(default_factory=list)
    absorption: object = None
    factorization_residual: float = 0.0

    @property
    def passed(self):
        return all(c <= self.bound_constant for c in self.constants.values())

    @property
    def failures(self):
        return [name for name, c in self.constants.items() if c > self.bound_constant]

    def as_row(self):
        row = dict(self.params.as_row())
        row.update({
            "frequencies": " ".join(str(mu) for mu in self.frequencies),
            "displacement_sup": self.displacement_sup,
            "displacement_c1": self.displacement_c1,
            "v_c2": self.v_c2,
            "error_sup": self.error_sup,
            "error_c1": self.error_c1,
            "factorization_residual": self.factorization_residual,
            "support_contained": self.support_contained,
            "passed": self.passed,
        })
        for name, value in self.constants.items():
            row[f"C_{name}"] = value
        return row


def _violated(name, **params):
    raise ValidationError(f"stage hypothesis violated: {name}", code="stage_hypothesis", params=params)


def check_stage_hypotheses(u, rho, H, params):
    c = get_setting("HYPOTHESIS_CONSTANT", 4.0)
    root, lam = math.sqrt(params.delta), params.lam
    induced_metric(u, params.accuracy).check_elliptic(params.gamma)
    second = jet_norms(u)[2]
    if second > c * root * lam:
        _violated("embedding curvature", value=second, bound=c * root * lam)
    rho_norms = holder_norms(rho, accuracy=params.accuracy)
    if rho_norms.sup_norm > c * root:
        _violated("rho size", value=rho_norms.sup_norm, bound=c * root)
    if rho_norms.first_seminorm > c * root * lam:
        _violated("rho gradient", value=rho_norms.first_seminorm, bound=c * root * lam)
    h_norms = holder_norms(H, accuracy=params.accuracy)
    if h_norms.sup_norm > c * lam ** (-params.alpha):
        _violated("H size", value=h_norms.sup_norm, bound=c * lam ** (-params.alpha))
    if h_norms.first_seminorm > c * lam ** (1.0 - params.alpha):
        _violated("H gradient", value=h_norms.first_seminorm, bound=c * lam ** (1.0 - params.alpha))


def _in_context(label, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ValidationError as exc:
        message = exc.messages[0] if exc.messages else str(exc)
        raise ValidationError(
            f"{message} [{label}]", code=getattr(exc, "code", None), params=getattr(exc, "params", None)
        ) from exc


def _plain_steps(u, primitives, basis, frequencies, sizes, first_nu, params, label):
    """Run consecutive steps, each adding a chunk of (index, amplitude) primitives.

    The first step is checked against the stage's ν̃, later ones against the step before.
    """
    M = get_setting("STEP_BOUND_M", 10.0)
    current, reports = u, []
    nu, start = first_nu, 0
    for index, (mu, size) in enumerate(zip(frequencies, sizes)):
        chunk = primitives[start : start + size]
        start += size
        step = StepInput(
            current,
            [amp for _, amp in chunk],
            [Phase.linear(basis.lattice[k]) for k, _ in chunk],
            mu,
            M=M,
            gamma=params.gamma,
            delta=params.delta,
            nu=nu,
            nu_tilde=frequencies[index - 1] if index else params.first_nu_tilde,
            accuracy=params.accuracy,
        )
        current, report = _in_context(f"{label}, step {index + 1}", apply_step, step, measure_c1=False)
        reports.append(report)
        nu = mu
    return current, reports


def _lattice_amplitudes(amplitudes, basis, r):
    """(k, ã_k·ρ̃/|w_k|) so that the phase w_k·x carries the unit direction ξ_k."""
    out = []
    for k, a in amplitudes:
        norm = float(np.linalg.norm(basis.lattice[k]))
        out.append((k, PeriodicField((a.scalar() * r / norm)[..., None], period=a.period)))
    return out


def run_stage(u, rho, G, H, params, basis=None):
    """One stage: v with ∇vᵀ∇v = ∇uᵀ∇u + ρ²(G + H) + 𝓔 and 𝓔 measured from the jets of v."""
    n = u.n
    if params.n != n:
        raise ValueError(f"stage parameters are for n = {params.n}, embedding has n = {n}")
    label = f"stage n={n} {params.branch}"
    check_stage_hypotheses(u, rho, H, params)
    frequencies = params.frequencies()
    rho_t, G_t, H_t, moll = mollify_triple(rho, G, H, params.ell, params.accuracy)
    target = G_t + H_t
    r = rho_t.scalar()
    basis = basis or torus_basis(n)
    steps, absorption, factorization_residual = [], None, 0.0

    if params.branch == "conformal":
        fact = _in_context(label, conformal_factorize, target, accuracy=params.accuracy)
        factorization_residual = fact.relative_residual
        mu = frequencies[0]
        phases = [
            Phase(np.round(mu * fact.slopes[i]) / mu, fact.corrections.component(i)) for i in range(2)
        ]
        amplitude = PeriodicField((fact.a.scalar() * r)[..., None], period=u.period)
        step = StepInput(
            u,
            [amplitude, amplitude],
            phases,
            mu,
            M=get_setting("STEP_BOUND_M", 10.0),
            gamma=params.gamma,
            delta=params.delta,
            nu=params.lam,
            nu_tilde=params.first_nu_tilde,
            accuracy=params.accuracy,
        )
        v, report = _in_context(f"{label}, step 1", apply_step, step, measure_c1=False)
        steps.append(report)
    elif params.branch in ("nash", "odd"):
        amplitudes = _in_context(label, nash_decompose, target, basis)
        primitives = _lattice_amplitudes(list(enumerate(amplitudes)), basis, r)
        sizes = [2, 1] if params.branch == "nash" else [n] * len(frequencies)
        v, steps = _plain_steps(u, primitives, basis, frequencies, sizes, params.lam, params, label)
    else:
        u1, leftover, absorption = _in_context(
            f"{label}, absorption",
            apply_absorption_step,
            u, rho_t, G_t, H_t, basis, params.lam,
            tau=params.tau, delta=params.delta, accuracy=params.accuracy,
        )
        primitives = [
            (k, PeriodicField(b.values / float(np.linalg.norm(basis.lattice[k])), period=u.period))
            for k, b in leftover
        ]
        sizes = [n] * len(frequencies)
        v, steps = _plain_steps(u1, primitives, basis, frequencies, sizes, absorption.omega, params, label)
        factorization_residual = absorption.decomposition_residual

    j_u = jacobian(u, params.accuracy)
    j_v = jacobian(v, params.accuracy)
    raw = rho.scalar()
    added = (raw**2)[..., None, None] * (G + H).matrices()
    error = MetricField.from_matrices(gram(j_v) - gram(j_u) - added, period=u.period)
    report = _report(u, v, error, params, frequencies, moll, steps, absorption, factorization_residual)
    logger.info(
        "%s δ=%.3g λ=%.3g κ=%.3f: ‖𝓔‖₀=%.3e, ‖v−u‖₁=%.3e, %s",
        label, params.delta, params.lam, params.kappa, report.error_sup, report.displacement_c1,
        "bounds hold" if report.passed else f"bounds exceeded: {', '.join(report.failures)}",
    )
    return v, error, report


def _report(u, v, error, params, frequencies, moll, steps, absorption, factorization_residual):
    displacement = PeriodicField(
        v.values - u.values, jacobian(v) - jacobian(u), hessian(v) - hessian(u), u.period
    )
    d_sup, d_first, _ = jet_norms(displacement)
    v_second = jet_norms(v)[2]
    error_sup = error.sup_norm()
    error_c1 = holder_norms(error, accuracy=params.accuracy).grad_sup

    root, lam, kappa, N = math.sqrt(params.delta), params.lam, params.kappa, params.N
    delta = params.delta
    constants = {
        "displacement_sup": d_sup / (root * lam ** (-(kappa + 1.0) / 2.0)),
        "displacement_c1": (d_sup + d_first) / root,
        "v_c2": v_second / (root * lam ** (N * (kappa - 1.0) + 1.0)),
        "error_sup": error_sup / (delta * lam ** (1.0 - kappa) + delta**2),
        "error_c1": error_c1 / (
            delta * lam ** ((N - 1.0) * (kappa - 1.0) + 1.0) + delta**2 * lam ** (N * (kappa - 1.0) + 1.0)
        ),
    }
    return StageReport(
        params=params,
        frequencies=frequencies,
        displacement_sup=d_sup,
        displacement_c1=d_sup + d_first,
        v_c2=v_second,
        error_sup=error_sup,
        error_c1=error_c1,
        constants=constants,
        bound_constant=get_setting("STAGE_BOUND_C", 50.0),
        support_contained=all(step.support_contained for step in steps),
        mollification=moll,
        steps=steps,
        absorption=absorption,
        factorization_residual=factorization_residual,
    )


def cross_validate(u, rho, G, H, params):
    """Run the conformal and the Nash-basis branch on the same n = 2 data.

    Returns the ratio of their ‖𝓔‖₀ together with both reports.
    """
    if params.n != 2:
        raise ValidationError("cross-validation needs n = 2", code="dimension")
    _, _, conformal = run_stage(u, rho, G, H, replace(params, branch="conformal"))
    _, _, nash = run_stage(u, rho, G, H, replace(params, branch="nash"))
    if nash.error_sup == 0.0:
        ratio = 1.0 if conformal.error_sup == 0.0 else math.inf
    else:
        ratio = conformal.error_sup / nash.error_sup
    logger.info("conformal/Nash defect ratio %.3f", ratio)
    return ratio, conformal, nash


def defect_reduction(u, g, v):
    """(‖g − ∇uᵀ∇u‖₀, ‖g − ∇vᵀ∇v‖₀)."""
    before = sup_spectral(g.matrices() - gram(jacobian(u)))
    after = sup_spectral(g.matrices() - gram(jacobian(v)))
    return before, after
