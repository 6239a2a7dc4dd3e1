import logging
from dataclasses import dataclass, field

import numpy as np
from django.core.exceptions import ValidationError

from apps.grid.fields import MetricField, PeriodicField, TWO_PI, coordinate_grid
from apps.grid.operators import FIRST_DERIVATIVE, _accuracy, derivative_array
from utils.config import get_setting

logger = logging.getLogger(__name__)

# Rotation by a quarter turn; J S J^T = S^{-1} for symmetric S with det S = 1.
ROTATION = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass
class ConformalFactorization:
    """P = a²(∇Φ₁⊗∇Φ₁ + ∇Φ₂⊗∇Φ₂) with Φ_i(x) = slopes[i]·x + corrections_i(x)."""

    slopes: np.ndarray
    corrections: PeriodicField
    gradients: np.ndarray
    a: PeriodicField
    residual: float
    relative_residual: float
    det_min: float
    a_min: float
    history: list = field(default_factory=list)

    def phase_values(self, index):
        """Samples of Φ_index (not periodic when its slope is nonzero)."""
        coords = coordinate_grid(2, self.a.resolution, self.a.period)
        linear = sum(self.slopes[index, j] * coords[j] for j in range(2))
        return linear + self.corrections.values[..., index]

    def reconstruct(self):
        a2 = self.a.values[..., 0] ** 2
        full = np.einsum("...ki,...kj->...ij", self.gradients, self.gradients) * a2[..., None, None]
        return MetricField.from_matrices(full, period=self.a.period)

    def as_row(self):
        return {
            "residual": self.residual,
            "relative_residual": self.relative_residual,
            "det_min": self.det_min,
            "a_min": self.a_min,
            "iterations": len(self.history),
        }


def _symbols(resolution, period, accuracy):
    """Fourier symbols s(k) with D e^{ikx} = i s(k) e^{ikx} for the centered stencil."""
    h = period / resolution
    k = np.fft.fftfreq(resolution, d=1.0 / resolution) * (TWO_PI / period)
    s = np.zeros_like(k)
    for j, c in enumerate(FIRST_DERIVATIVE[accuracy], start=1):
        s += 2.0 * c * np.sin(j * k * h)
    return s / h


class _DiscreteLaplacian:
    """L₀ = D·D on mean-zero periodic functions, inverted on its range by FFT."""

    def __init__(self, resolution, period, accuracy):
        s = _symbols(resolution, period, accuracy)
        s1, s2 = np.meshgrid(s, s, indexing="ij")
        symbol = -(s1**2 + s2**2)
        floor = 1e-12 * np.abs(symbol).max()
        self.inverse = np.where(np.abs(symbol) > floor, 1.0 / np.where(symbol == 0.0, 1.0, symbol), 0.0)

    def solve(self, rhs):
        return np.fft.ifft2(np.fft.fft2(rhs) * self.inverse).real


def _divergence(vector, spacing, accuracy):
    return sum(derivative_array(vector[..., i], i, 1, spacing, accuracy) for i in range(2))


def _gradient(scalar, spacing, accuracy):
    return np.stack([derivative_array(scalar, i, 1, spacing, accuracy) for i in range(2)], axis=-1)


def _conformal_structure(P):
    """S = √(det P)·P⁻¹, the unimodular matrix field of the conformal class of P."""
    mats = P.matrices()
    det = np.linalg.det(mats)
    bad = det <= 0.0
    if not np.any(bad):
        bad = np.linalg.eigvalsh(mats)[..., 0] <= 0.0
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(
            f"metric not uniformly elliptic at node {node}", code="ellipticity", params={"node": node}
        )
    adj = np.empty_like(mats)
    adj[..., 0, 0] = mats[..., 1, 1]
    adj[..., 1, 1] = mats[..., 0, 0]
    adj[..., 0, 1] = adj[..., 1, 0] = -mats[..., 0, 1]
    return adj / np.sqrt(det)[..., None, None], mats


def conformal_factorize(P, n=2, damping=1.0, accuracy=None):
    """Isothermal coordinates of a near-flat metric on T².

    Φ₁ = x₁ + φ₁ solves div(S∇Φ₁) = 0 by the fixed point
    φ₁ ← L₀⁺[−div((S − I)∇Φ₁)]; Φ₂ is the primitive of J S ∇Φ₁, which is
    curl-free exactly when the first equation holds.
    """
    if n != 2 or P.n != 2:
        raise ValidationError("conformal factorization needs n = 2", code="dimension")
    accuracy = _accuracy(accuracy)
    tol = get_setting("CONFORMAL_TOL", 1e-12)
    max_iter = int(get_setting("CONFORMAL_MAX_ITER", 200))
    near_flat = get_setting("CONFORMAL_NEAR_FLAT", 0.3)

    S, mats = _conformal_structure(P)
    T = S - np.eye(2)
    distortion = float(np.abs(np.linalg.eigvalsh(T)).max())
    if distortion > near_flat:
        raise ValidationError(
            "metric too far from conformally flat",
            code="conformal_range",
            params={"distortion": distortion, "limit": near_flat},
        )

    h = P.spacing
    laplacian = _DiscreteLaplacian(P.resolution, P.period, accuracy)
    slope1 = np.array([1.0, 0.0])
    phi1 = np.zeros(P.node_shape)
    history = []
    for iteration in range(1, max_iter + 1):
        grad1 = slope1 + _gradient(phi1, h, accuracy)
        update = laplacian.solve(-_divergence(np.einsum("...ij,...j->...i", T, grad1), h, accuracy))
        update = phi1 + damping * (update - phi1)
        step = float(np.abs(update - phi1).max())
        history.append(step)
        phi1 = update
        if step <= tol:
            break
    else:
        raise ValidationError(
            "conformal solver did not converge",
            code="conformal_convergence",
            params={"history": history},
        )

    grad1 = slope1 + _gradient(phi1, h, accuracy)
    rotated = np.einsum("ij,...jk,...k->...i", ROTATION, S, grad1)
    slope2 = rotated.reshape(-1, 2).mean(axis=0)
    phi2 = laplacian.solve(_divergence(rotated, h, accuracy))
    grad2 = slope2 + _gradient(phi2, h, accuracy)

    gradients = np.stack([grad1, grad2], axis=-2)
    det = np.linalg.det(gradients)
    if np.any(det <= 0.0):
        node = tuple(int(i) for i in np.argwhere(det <= 0.0)[0])
        raise ValidationError(
            f"isothermal coordinates degenerate at node {node}", code="conformal_degenerate"
        )
    a2 = np.trace(mats, axis1=-2, axis2=-1) / np.sum(gradients**2, axis=(-2, -1))
    a = np.sqrt(a2)

    rebuilt = a2[..., None, None] * np.einsum("...ki,...kj->...ij", gradients, gradients)
    residual = float(np.abs(np.linalg.eigvalsh(rebuilt - mats)).max())
    scale = float(np.abs(np.linalg.eigvalsh(mats)).max())
    grads1 = _gradient(phi1, h, accuracy)
    grads2 = _gradient(phi2, h, accuracy)
    corrections = PeriodicField(
        np.stack([phi1, phi2], axis=-1),
        jacobian=np.stack([grads1, grads2], axis=-2),
        period=P.period,
    )
    result = ConformalFactorization(
        slopes=np.stack([slope1, slope2]),
        corrections=corrections,
        gradients=gradients,
        a=PeriodicField(a[..., None], period=P.period),
        residual=residual,
        relative_residual=residual / scale,
        det_min=float(det.min()),
        a_min=float(a.min()),
        history=history,
    )
    logger.debug(
        "conformal factorization: %d iterations, residual %.2e, det_min %.3f",
        len(history), residual, result.det_min,
    )
    return result
