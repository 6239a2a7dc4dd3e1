import logging
import math
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from apps.decompose.basis import torus_basis
from apps.decompose.conformal import conformal_factorize
from apps.decompose.decomposition import calibrate_contraction_radius
from apps.grid.fields import MetricField, PeriodicField, coordinate_grid
from apps.grid.operators import product_embedding
from apps.stage.pipeline import StageParams, defect_reduction, run_stage
from apps.step.corrugate import Phase, StepInput, apply_step
from utils.artifacts import write_json
from utils.config import get_setting

logger = logging.getLogger(__name__)

NOTES = {
    "sigma1": "Picard contraction radius, torus frame n=2, bisection",
    "step_c0": "smallest μ/ν̃ with the step bound constant below STEP_BOUND_M",
    "step_bound": "largest ‖D‖₀ / (δν/μ + δ²) over μ ≥ c₀ν̃",
    "conformal_residual": "relative conformal reconstruction residual, near-flat reference",
    "delta_star": "largest δ for which a flat-seed stage at λ=64 passes",
    "lambda_star": "smallest λ for which a flat-seed stage at δ=0.19 passes",
}


def _step_constants(resolution=32, delta=0.01):
    u = product_embedding(2, resolution, 0.9)
    amplitude = PeriodicField.constant(math.sqrt(delta), 2, resolution)
    limit = get_setting("STEP_BOUND_M", 10.0)
    c0, bound = None, 0.0
    for mu in (2, 4, 8, 16, 32, 64, 128):
        step = StepInput(u, [amplitude], [Phase.linear([1, 0])], mu, delta=delta, nu=1.0)
        _, report = apply_step(step, measure_c1=False)
        if report.bound_constant <= limit:
            c0 = c0 or float(mu)
            bound = max(bound, report.bound_constant)
        elif c0 is not None:
            logger.warning("step bound constant %.3g above M at μ=%d past c₀", report.bound_constant, mu)
    return c0, bound


def _conformal_residual(resolution=64):
    x1, x2 = coordinate_grid(2, resolution)
    p11, p12, p22 = 1.0 + 0.1 * np.sin(x1) * np.cos(x2), 0.1 * np.sin(x1 + x2), 1.0 - 0.1 * np.cos(x1)
    P = MetricField.from_matrices(np.stack([np.stack([p11, p12], -1), np.stack([p12, p22], -1)], -2))
    return conformal_factorize(P).residual / P.sup_norm()


def _stage_passes(delta, lam, resolution=64, kappa=1.2):
    u = product_embedding(2, resolution, 0.9)
    rho = PeriodicField.constant(math.sqrt(delta), 2, resolution)
    G = MetricField.identity(2, resolution)
    try:
        v, _, report = run_stage(u, rho, G, MetricField.zeros(2, resolution), StageParams(delta, lam, kappa))
    except ValidationError as exc:
        logger.debug("stage δ=%g λ=%g rejected: %s", delta, lam, "; ".join(exc.messages))
        return False
    before, after = defect_reduction(u, G, v)
    return report.passed and after < before


def _admissible_region():
    delta_star = None
    for delta in (0.02, 0.05, 0.1, 0.19, 0.25):
        if not _stage_passes(delta, 64.0):
            break
        delta_star = delta
    lambda_star = None
    for lam in (4.0, 8.0, 16.0, 32.0, 64.0):
        if _stage_passes(0.19, lam):
            lambda_star = lam
            break
    return delta_star, lambda_star


def calibrate():
    """Measure the existence-only constants on reference families."""
    c0, bound = _step_constants()
    delta_star, lambda_star = _admissible_region()
    constants = {
        "sigma1": calibrate_contraction_radius(torus_basis(2), count=1, steps=20),
        "step_c0": c0,
        "step_bound": bound,
        "conformal_residual": _conformal_residual(),
        "delta_star": delta_star,
        "lambda_star": lambda_star,
        "s_max": get_setting("S_MAX", 0.6),
    }
    logger.info("calibration: %s", constants)
    return constants


def write_manifest(constants, path=None):
    path = Path(path or get_setting("CALIBRATION_MANIFEST", "calibration.json"))
    return write_json(path, {"constants": constants, "notes": NOTES})
