import logging
from dataclasses import dataclass, field

import numpy as np
from django.core.exceptions import ValidationError

from apps.grid.fields import MetricField, PeriodicField, packed_indices
from utils.config import get_setting

logger = logging.getLogger(__name__)


def _packed(matrix_field):
    if isinstance(matrix_field, MetricField):
        return matrix_field.values
    raise TypeError("expected a MetricField")


def primitive_coefficients(P, basis):
    """Nodewise L_i(P) with tiny negatives clamped to 0; returns (coefficients, clamp count)."""
    clamp = get_setting("DECOMPOSE_CLAMP", 1e-14)
    coeffs = basis.coefficients(_packed(P))
    negative = coeffs < -clamp
    if np.any(negative):
        where = np.argwhere(negative)[0]
        node, index = tuple(int(i) for i in where[:-1]), int(where[-1])
        raise ValidationError(
            f"oscillation exceeds decomposition radius at node {node}",
            code="decomposition_radius",
            params={"node": node, "index": index, "value": float(coeffs[tuple(where)])},
        )
    small = coeffs < clamp
    clamped = int(np.count_nonzero(small & (coeffs != 0.0)))
    if clamped:
        logger.warning("clamped %d near-zero decomposition coefficients", clamped)
    return np.where(small, 0.0, coeffs), clamped


def nash_decompose(P, basis):
    """Amplitudes a_i = √L_i(P) as k = 1 fields, one per basis direction."""
    coeffs, _ = primitive_coefficients(P, basis)
    amplitudes = np.sqrt(coeffs)
    return [PeriodicField(amplitudes[..., i : i + 1], period=P.period) for i in range(basis.size)]


def reconstruct(amplitudes, basis):
    coeffs = np.concatenate([a.values for a in amplitudes], axis=-1) ** 2
    return MetricField.from_matrices(basis.reconstruct(coeffs), period=amplitudes[0].period)


def sup_spectral(matrices):
    """max over nodes of the spectral norm of symmetric matrices (…, n, n)."""
    return float(np.abs(np.linalg.eigvalsh(matrices)).max())


@dataclass
class PerturbedDecomposition:
    amplitudes: list
    iterations: int
    history: list = field(default_factory=list)
    residual: float = 0.0
    perturbation: float = 0.0

    @property
    def contraction_ratios(self):
        steps = np.asarray(self.history)
        if steps.size < 2:
            return []
        with np.errstate(divide="ignore", invalid="ignore"):
            return list(np.where(steps[:-1] > 0, steps[1:] / steps[:-1], 0.0))


def _perturbation_terms(a, lambdas, thetas, count):
    """Σ a_k Λ_k + Σ a_k a_l Θ_kl as full matrices, k, l < N₀."""
    total = 0.0
    for k in range(count):
        total = total + a[k][..., None] * lambdas[k].matrices()
        for l in range(count):
            total = total + (a[k] * a[l])[..., None] * thetas[k][l].matrices()
    return total


def perturbation_size(P, lambdas, thetas, basis):
    drift = sup_spectral(P.matrices() - basis.reference)
    drift += sum(sup_spectral(lam.matrices()) for lam in lambdas)
    drift += sum(sup_spectral(th.matrices()) for row in thetas for th in row)
    return drift


def perturbed_decompose(P, lambdas, thetas, basis, count, sigma1=None):
    """Solve P = Σ a_i²ξ_i⊗ξ_i + Σ a_kΛ_k + Σ a_k a_lΘ_kl by Picard iteration."""
    if not 0 <= count <= basis.size or len(lambdas) < count:
        raise ValueError("N₀ must not exceed the number of primitives or of Λ terms")
    tol = get_setting("PICARD_TOL", 1e-12)
    max_iter = int(get_setting("PICARD_MAX_ITER", 100))
    size = perturbation_size(P, lambdas, thetas, basis)
    if sigma1 is not None and size > sigma1:
        raise ValidationError(
            "perturbation exceeds contraction radius",
            code="contraction_radius",
            params={"size": size, "sigma1": sigma1},
        )
    rows, cols = packed_indices(basis.n)
    target = P.matrices()
    try:
        coeffs, _ = primitive_coefficients(P, basis)
        a = np.sqrt(coeffs)
        a = [a[..., i] for i in range(basis.size)]
        history = []
        for iteration in range(1, max_iter + 1):
            rhs = target - _perturbation_terms(a, lambdas, thetas, count)
            coeffs, _ = primitive_coefficients(MetricField(rhs[..., rows, cols], period=P.period), basis)
            new = np.sqrt(coeffs)
            new = [new[..., i] for i in range(basis.size)]
            step = max(float(np.abs(x - y).max()) for x, y in zip(new, a))
            history.append(step)
            a = new
            if step <= tol:
                break
        else:
            raise ValidationError(
                "perturbation exceeds contraction radius",
                code="contraction_radius",
                params={"history": history},
            )
    except ValidationError as exc:
        if getattr(exc, "code", None) == "contraction_radius":
            raise
        raise ValidationError(
            "perturbation exceeds contraction radius",
            code="contraction_radius",
            params={"cause": exc.messages[0]},
        ) from exc

    rebuilt = basis.reconstruct(np.stack([x**2 for x in a], axis=-1))
    rebuilt = rebuilt + _perturbation_terms(a, lambdas, thetas, count)
    residual = sup_spectral(rebuilt - target)
    logger.debug("Picard converged in %d iterations, residual %.2e", iteration, residual)
    amplitudes = [PeriodicField(x[..., None], period=P.period) for x in a]
    return PerturbedDecomposition(amplitudes, iteration, history, residual, size)


def calibrate_contraction_radius(basis, count=None, resolution=8, seed=None, steps=30, upper=None):
    """Bisect the largest perturbation size for which the Picard iteration still converges."""
    seed = seed if seed is not None else get_setting("SEED", 0)
    count = basis.size if count is None else count
    rng = np.random.default_rng(seed)
    n = basis.n
    shape = (resolution,) * n

    def random_symmetric():
        m = rng.normal(size=(n, n))
        m = 0.5 * (m + m.T)
        return m / np.abs(np.linalg.eigvalsh(m)).max()

    directions = [random_symmetric() for _ in range(count)]
    thetas_dir = [[random_symmetric() for _ in range(count)] for _ in range(count)]
    terms = count + count * count
    P = MetricField.from_matrices(np.broadcast_to(basis.reference, shape + (n, n)))

    def attempt(size):
        scale = size / max(terms, 1)
        lambdas = [MetricField.from_matrices(np.broadcast_to(scale * d, shape + (n, n))) for d in directions]
        thetas = [
            [MetricField.from_matrices(np.broadcast_to(scale * d, shape + (n, n))) for d in row]
            for row in thetas_dir
        ]
        try:
            result = perturbed_decompose(P, lambdas, thetas, basis, count)
        except ValidationError:
            return False
        return result.residual <= 1e-8

    low = 0.0
    high = upper if upper is not None else 4.0 * float(np.max(basis.reference_values()))
    if attempt(high):
        return high
    for _ in range(steps):
        mid = 0.5 * (low + high)
        if attempt(mid):
            low = mid
        else:
            high = mid
    logger.info("calibrated contraction radius sigma1=%.4g (n=%d, N0=%d)", low, n, count)
    return low
