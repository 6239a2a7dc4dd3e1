import logging
import math
from dataclasses import dataclass, field

import numpy as np
from django.core.exceptions import ValidationError

from apps.decompose.decomposition import perturbed_decompose, sup_spectral
from apps.frames.normals import normal_frame
from apps.grid.fields import MetricField, PeriodicField, coordinate_grid
from apps.grid.operators import gradient_array, gram, hessian, injectivity_margin, jacobian, jet_norms, mollify
from utils.config import get_setting

from .corrugate import OVERFLOW_MESSAGE

logger = logging.getLogger(__name__)


def smooth_step(s):
    """C^∞ step: 0 for s ≤ 0, 1 for s ≥ 1."""
    s = np.asarray(s, dtype=float)

    def bump(x):
        out = np.zeros_like(x)
        positive = x > 0.0
        out[positive] = np.exp(-1.0 / x[positive])
        return out

    left, right = bump(s), bump(1.0 - s)
    return left / (left + right)


def cutoff(rho, scale):
    """ψ(ρ): 1/scale for ρ ≤ scale, 1/ρ for ρ ≥ 2·scale, smooth and nonincreasing between."""
    rho = np.asarray(rho, dtype=float)
    chi = smooth_step((rho - scale) / scale)
    with np.errstate(divide="ignore"):
        inverse = np.where(rho > 0.0, 1.0 / np.where(rho > 0.0, rho, 1.0), 0.0)
    return chi * inverse + (1.0 - chi) / scale


def _sym(matrices):
    return 0.5 * (matrices + np.swapaxes(matrices, -1, -2))


@dataclass
class AbsorptionReport:
    omega: int
    tau: float
    frequencies: list
    cutoff_scale: float
    perturbation: float
    picard_iterations: int
    decomposition_residual: float
    error_one: float
    error_two: float
    identity_residual: float
    displacement_sup: float
    displacement_c1: float
    u1_c2: float
    amplitude_max: float
    injectivity: float
    errors: dict = field(default_factory=dict, repr=False)

    def as_row(self):
        return {
            "omega": self.omega,
            "tau": self.tau,
            "cutoff_scale": self.cutoff_scale,
            "perturbation": self.perturbation,
            "picard_iterations": self.picard_iterations,
            "decomposition_residual": self.decomposition_residual,
            "error_one": self.error_one,
            "error_two": self.error_two,
            "identity_residual": self.identity_residual,
            "displacement_sup": self.displacement_sup,
            "displacement_c1": self.displacement_c1,
            "u1_c2": self.u1_c2,
            "amplitude_max": self.amplitude_max,
            "injectivity": self.injectivity,
        }


def apply_absorption_step(
    u, rho, G, H, basis, lam, tau=None, kappa=None, delta=None, accuracy=None, sigma1=None
):
    """Nash spirals along the first n/2 basis directions with their errors absorbed.

    The spiral terms Λ_k (linear) and Θ_kl (quadratic) are folded into the
    decomposition of ρ²(G+H), so the n/2 spirals and the remaining n²/2
    primitives reproduce it exactly before mollification. Returns u₁, the
    leftover mollified amplitudes b̃_k (k ≥ n/2, paired with basis directions)
    and the report.
    """
    n = u.n
    if n % 2:
        raise ValidationError("absorption needs an even dimension", code="dimension")
    if basis.lattice is None:
        raise ValueError("absorption needs an integer basis")
    if tau is None:
        if kappa is None:
            raise ValueError("give τ or κ")
        tau = 0.5 * (kappa + 1.0)
    if delta is None:
        delta = float(np.max(rho.values)) ** 2
    count = n // 2
    acc = accuracy
    h = u.spacing
    resolution = u.resolution

    omega = int(round(lam**tau))
    scale = get_setting("CUTOFF_CONSTANT_C0", 1.0) * math.sqrt(delta) * lam ** (1.0 - tau)
    smooth = mollify(u, lam ** (-tau))
    frame = normal_frame(smooth, accuracy=acc)
    pairs = frame.pairs()
    j_u = jacobian(u, acc)
    coords = np.stack(coordinate_grid(n, resolution, u.period), axis=-1)

    spirals = []
    for k in range(count):
        w = basis.lattice[k].astype(float)
        frequency = omega * float(np.linalg.norm(w))
        xi = basis.directions[k]
        phase = omega * coords @ w
        zeta, eta = pairs[k]
        cos, sin = np.cos(phase)[..., None], np.sin(phase)[..., None]
        grad_zeta = gradient_array(zeta, n, h, acc)
        grad_eta = gradient_array(eta, n, h, acc)
        turn = cos * zeta - sin * eta
        spirals.append({
            "frequency": frequency,
            "xi": xi,
            "cos": cos,
            "sin": sin,
            "turn": turn,
            "grad_zeta": grad_zeta,
            "grad_eta": grad_eta,
            "A": turn[..., :, None] * xi,
            "B": sin[..., None] * grad_zeta + cos[..., None] * grad_eta,
            "D": sin * zeta + cos * eta,
        })

    for sp in spirals:
        lin = 2.0 * _sym(np.einsum("...ai,...aj->...ij", j_u, sp["A"]))
        lin += (2.0 / sp["frequency"]) * _sym(np.einsum("...ai,...aj->...ij", j_u, sp["B"]))
        sp["Lambda"] = lin
    thetas = [[None] * count for _ in range(count)]
    for k, sk in enumerate(spirals):
        for l, sl in enumerate(spirals):
            quad = (2.0 / sl["frequency"]) * _sym(np.einsum("...ai,...aj->...ij", sk["A"], sl["B"]))
            quad += _sym(np.einsum("...ai,...aj->...ij", sk["B"], sl["B"])) / (sk["frequency"] * sl["frequency"])
            thetas[k][l] = quad

    r = rho.scalar()
    psi = cutoff(r, scale)
    lambdas = [MetricField.from_matrices(psi[..., None, None] * sp["Lambda"], period=u.period) for sp in spirals]
    theta_fields = [[MetricField.from_matrices(t, period=u.period) for t in row] for row in thetas]
    target = G + H
    decomposition = perturbed_decompose(target, lambdas, theta_fields, basis, count, sigma1=sigma1)
    a = [amp.scalar() for amp in decomposition.amplitudes]
    b = [r * x for x in a]

    outer = [np.outer(xi, xi) for xi in basis.directions]
    absorbed = sum((r**2 * psi * a[k])[..., None, None] * spirals[k]["Lambda"] for k in range(count))
    absorbed = absorbed + sum(
        (b[k] * b[l])[..., None, None] * thetas[k][l] for k in range(count) for l in range(count)
    )
    primitive = sum((x**2)[..., None, None] * o for x, o in zip(b, outer))
    rho_target = (r**2)[..., None, None] * target.matrices()
    decomposition_residual = sup_spectral(primitive + absorbed - rho_target)

    ell = lam ** (1.0 - 2.0 * tau)
    b_smooth = [mollify(PeriodicField(x[..., None], period=u.period), ell) for x in b]
    bt = [x.scalar() for x in b_smooth]
    amplitude_max = float(max(np.abs(x).max() for x in bt))
    s_max = get_setting("S_MAX", 0.6)
    if amplitude_max > s_max:
        raise ValidationError(OVERFLOW_MESSAGE, code="amplitude_overflow", params={"amplitude": amplitude_max})

    values = u.values.copy()
    j_1 = j_u.copy()
    h_u = hessian(u, acc)
    h_1 = h_u.copy()
    gradient_terms = np.zeros_like(rho_target)
    for k, sp in enumerate(spirals):
        freq = sp["frequency"]
        grad_b = gradient_array(bt[k], n, h, acc)
        C = sp["D"][..., :, None] * grad_b[..., None, :] / freq
        values += bt[k][..., None] * sp["D"] / freq
        j_1 += bt[k][..., None, None] * (sp["A"] + sp["B"] / freq) + C
        sp["C"] = C

        leading = -freq * (bt[k][..., None] * sp["D"])[..., :, None, None] * np.multiply.outer(sp["xi"], sp["xi"])
        turned = sp["cos"][..., None] * sp["grad_zeta"] - sp["sin"][..., None] * sp["grad_eta"]
        bend = bt[k][..., None, None, None] * turned[..., :, :, None] * sp["xi"]
        ramp = (sp["turn"][..., :, None] * grad_b[..., None, :])[..., :, :, None] * sp["xi"]
        h_1 += leading + bend + np.swapaxes(bend, -1, -2) + ramp + np.swapaxes(ramp, -1, -2)

    for k, sk in enumerate(spirals):
        freq_k = sk["frequency"]
        gradient_terms += 2.0 * _sym(np.einsum("...ai,...aj->...ij", j_u, sk["C"]))
        for l, sl in enumerate(spirals):
            moving = bt[k][..., None, None] * (sk["A"] + sk["B"] / freq_k)
            gradient_terms += 2.0 * _sym(np.einsum("...ai,...aj->...ij", moving, sl["C"]))
            gradient_terms += _sym(np.einsum("...ai,...aj->...ij", sk["C"], sl["C"]))

    smoothed = sum((bt[k] ** 2)[..., None, None] * outer[k] for k in range(count))
    smoothed = smoothed + sum((bt[k])[..., None, None] * spirals[k]["Lambda"] for k in range(count))
    smoothed = smoothed + sum(
        (bt[k] * bt[l])[..., None, None] * thetas[k][l] for k in range(count) for l in range(count)
    )
    exact = sum((b[k] ** 2)[..., None, None] * outer[k] for k in range(count)) + absorbed
    error_one = smoothed - exact
    error_two = gradient_terms
    measured = gram(j_1) - gram(j_u)
    identity_residual = sup_spectral(measured - exact - error_one - error_two)

    u1 = PeriodicField(values, jacobian=j_1, hessian=_sym(h_1), period=u.period)
    d_sup, d_first, _ = jet_norms(PeriodicField(values - u.values, j_1 - j_u, u1.hessian - h_u, u.period))
    c2 = sum(jet_norms(u1))
    leftover = [
        (k, PeriodicField(bt[k][..., None], period=u.period)) for k in range(count, basis.size)
    ]
    report = AbsorptionReport(
        omega=omega,
        tau=tau,
        frequencies=[sp["frequency"] for sp in spirals],
        cutoff_scale=scale,
        perturbation=decomposition.perturbation,
        picard_iterations=decomposition.iterations,
        decomposition_residual=decomposition_residual,
        error_one=sup_spectral(error_one),
        error_two=sup_spectral(error_two),
        identity_residual=identity_residual,
        displacement_sup=d_sup,
        displacement_c1=d_sup + d_first,
        u1_c2=c2,
        amplitude_max=amplitude_max,
        injectivity=injectivity_margin(u1),
        errors={
            "error_one": MetricField.from_matrices(error_one, period=u.period),
            "error_two": MetricField.from_matrices(error_two, period=u.period),
        },
    )
    logger.info(
        "absorption ω=%d τ=%.3f: decomposition residual %.2e, ‖E1‖₀=%.2e, ‖E2‖₀=%.2e",
        omega, tau, decomposition_residual, report.error_one, report.error_two,
    )
    return u1, leftover, report
