import itertools
import logging
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from apps.grid.fields import packed_indices, packed_size

logger = logging.getLogger(__name__)


@dataclass
class NashBasis:
    """Unit directions ξ_i with linear functionals L_i such that P = Σ L_i(P) ξ_i⊗ξ_i.

    ``functionals`` acts on the packed upper-triangle layout of MetricField;
    ``duals`` are the same functionals as Frobenius-dual matrices.
    """

    n: int
    directions: np.ndarray
    functionals: np.ndarray
    duals: np.ndarray
    reference: np.ndarray
    sigma0: float
    lattice: np.ndarray = None

    @property
    def size(self):
        return len(self.directions)

    def coefficients(self, packed):
        """L_i applied to packed symmetric matrices (…, n*) → (…, n*)."""
        return np.asarray(packed) @ self.functionals.T

    def rank_one(self, index):
        xi = self.directions[index]
        return np.outer(xi, xi)

    def reconstruct(self, coefficients):
        """Σ c_i ξ_i⊗ξ_i as full matrices."""
        outer = np.einsum("ia,ib->iab", self.directions, self.directions)
        return np.einsum("...i,iab->...ab", coefficients, outer)

    def reference_values(self):
        rows, cols = packed_indices(self.n)
        return self.coefficients(self.reference[rows, cols])

    def as_row(self):
        return {
            "n": self.n,
            "size": self.size,
            "sigma0": self.sigma0,
            "min_reference_coefficient": float(self.reference_values().min()),
        }


def _build(n, directions, reference, lattice=None):
    directions = np.asarray(directions, dtype=float)
    directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    size = packed_size(n)
    if directions.shape != (size, n):
        raise ValueError(f"need {size} directions in R^{n}")
    rows, cols = packed_indices(n)
    frame = np.stack([np.outer(xi, xi)[rows, cols] for xi in directions], axis=1)
    if np.linalg.matrix_rank(frame) != size:
        raise ValidationError("singular frame system", code="singular_frame")
    functionals = np.linalg.inv(frame)
    duals = np.zeros((size, n, n))
    for i in range(size):
        for idx, (a, b) in enumerate(zip(rows, cols)):
            if a == b:
                duals[i, a, a] = functionals[i, idx]
            else:
                duals[i, a, b] = duals[i, b, a] = 0.5 * functionals[i, idx]

    reference = np.asarray(reference, dtype=float)
    if reference.shape != (n, n) or np.linalg.eigvalsh(0.5 * (reference + reference.T))[0] <= 0.0:
        raise ValidationError("reference matrix must be positive definite", code="reference")
    values = functionals @ reference[rows, cols]
    norms = np.sqrt(np.sum(duals**2, axis=(1, 2)))
    sigma0 = float(max(0.0, np.min(0.5 * values / norms)))
    logger.debug("basis n=%d built, min L_i(P0)=%.3g, sigma0=%.3g", n, values.min(), sigma0)
    return NashBasis(n, directions, functionals, duals, reference, sigma0, lattice)


def nash_basis(n, reference=None):
    """Canonical frame {e_i} ∪ {(e_i+e_j)/√2, i<j}."""
    if n < 2:
        raise ValidationError("dimension must be at least 2", code="dimension")
    eye = np.eye(n)
    directions = [eye[i] for i in range(n)]
    directions += [(eye[i] + eye[j]) / np.sqrt(2.0) for i, j in itertools.combinations(range(n), 2)]
    reference = np.eye(n) if reference is None else reference
    return _build(n, directions, reference)


def torus_lattice(n):
    """Integer directions 1 − k·e_i and e_i + e_j with the identity strictly inside their cone.

    Phases w·x stay periodic on Tⁿ for integer w. k > n/2 keeps the identity's
    coefficients positive; n = 2 needs k = 3 so that the two g-directions differ.
    """
    k = 3 if n == 2 else n // 2 + 1
    ones = np.ones(n, dtype=int)
    eye = np.eye(n, dtype=int)
    lattice = [ones - k * eye[i] for i in range(n)]
    lattice += [eye[i] + eye[j] for i, j in itertools.combinations(range(n), 2)]
    return np.array(lattice, dtype=int)


def torus_basis(n, reference=None):
    lattice = torus_lattice(n)
    reference = np.eye(n) if reference is None else reference
    basis = _build(n, lattice, reference, lattice=lattice)
    if basis.reference_values().min() <= 0.0:
        raise ValidationError("reference lies outside the torus frame cone", code="reference")
    return basis
