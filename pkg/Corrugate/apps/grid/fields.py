import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from django.core.exceptions import ValidationError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
MIN_RESOLUTION = 8


def packed_size(n):
    return n * (n + 1) // 2


def packed_indices(n):
    """Upper-triangle (row-major) index pairs used by the packed metric layout."""
    return np.triu_indices(n)


def coordinate_grid(n, resolution, period=TWO_PI):
    """Node coordinates x_i, each of shape (R,)*n."""
    axis = np.arange(resolution) * (period / resolution)
    return np.meshgrid(*([axis] * n), indexing="ij")


@dataclass(frozen=True, eq=False)
class PeriodicField:
    """Samples of a k-vector valued function on the uniform periodic grid of Tⁿ.

    ``values`` has shape (R,)*n + (k,). When the producer knows the derivatives
    analytically it may attach ``jacobian`` (…, k, n) and ``hessian`` (…, k, n, n);
    downstream metric measurements then use them instead of differences.
    """

    values: np.ndarray
    jacobian: np.ndarray = None
    hessian: np.ndarray = None
    period: float = TWO_PI

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size == 0:
            raise ValidationError("empty field", code="empty_field")
        if values.ndim < 3:
            raise ValueError("values must have shape (R,)*n + (k,) with n >= 2")
        spatial = values.shape[:-1]
        n = len(spatial)
        if not 2 <= n <= 4:
            raise ValidationError(
                f"domain dimension {n} outside 2..4", code="dimension", params={"n": n}
            )
        if len(set(spatial)) != 1:
            raise ValidationError(
                "resolution must be identical along every axis",
                code="resolution",
                params={"shape": spatial},
            )
        if spatial[0] < MIN_RESOLUTION:
            raise ValidationError(
                "grid too coarse", code="grid_too_coarse", params={"R": spatial[0]}
            )
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ValidationError(
                f"non-finite sample at node {tuple(int(i) for i in bad[:-1])}",
                code="non_finite",
            )
        object.__setattr__(self, "values", values)
        for name, extra in (("jacobian", 1), ("hessian", 2)):
            jet = getattr(self, name)
            if jet is None:
                continue
            jet = np.asarray(jet, dtype=float)
            expected = values.shape + (n,) * extra
            if jet.shape != expected:
                raise ValueError(f"{name} has shape {jet.shape}, expected {expected}")
            object.__setattr__(self, name, jet)

    @property
    def n(self):
        return self.values.ndim - 1

    @property
    def k(self):
        return self.values.shape[-1]

    @property
    def resolution(self):
        return self.values.shape[0]

    @property
    def spacing(self):
        return self.period / self.resolution

    @property
    def node_shape(self):
        return self.values.shape[:-1]

    def component(self, index):
        jac = None if self.jacobian is None else self.jacobian[..., index : index + 1, :]
        hes = None if self.hessian is None else self.hessian[..., index : index + 1, :, :]
        return PeriodicField(self.values[..., index : index + 1], jac, hes, self.period)

    def scalar(self):
        """The samples of a k = 1 field as an (R,)*n array."""
        if self.k != 1:
            raise ValueError("scalar() needs a k = 1 field")
        return self.values[..., 0]

    def without_jets(self):
        return replace(self, jacobian=None, hessian=None)

    def __add__(self, other):
        return _combine(self, other, np.add)

    def __sub__(self, other):
        return _combine(self, other, np.subtract)

    @classmethod
    def from_function(cls, fn, n, resolution, period=TWO_PI):
        """Sample ``fn(*coords)``; a scalar result becomes a k = 1 field."""
        coords = coordinate_grid(n, resolution, period)
        result = np.asarray(fn(*coords), dtype=float)
        if result.shape == coords[0].shape:
            result = result[..., None]
        return cls(result, period=period)

    @classmethod
    def constant(cls, value, n, resolution, k=1):
        values = np.broadcast_to(np.asarray(value, dtype=float), (resolution,) * n + (k,))
        return cls(values.copy())


def _combine(left, right, op):
    if not isinstance(right, PeriodicField):
        return NotImplemented
    if left.values.shape != right.values.shape:
        raise ValueError("fields live on different grids")

    def jet(a, b):
        if a is None or b is None:
            return None
        return op(a, b)

    return PeriodicField(
        op(left.values, right.values),
        jet(left.jacobian, right.jacobian),
        jet(left.hessian, right.hessian),
        left.period,
    )


@dataclass(frozen=True, eq=False)
class MetricField(PeriodicField):
    """Symmetric n×n matrices per node, stored as the packed upper triangle."""

    gamma: float = None

    def __post_init__(self):
        super().__post_init__()
        n = self.n
        if self.k != packed_size(n):
            raise ValueError(f"metric on T^{n} needs {packed_size(n)} packed entries, got {self.k}")

    def matrices(self):
        n = self.n
        rows, cols = packed_indices(n)
        full = np.zeros(self.node_shape + (n, n))
        full[..., rows, cols] = self.values
        full[..., cols, rows] = self.values
        return full

    @classmethod
    def from_matrices(cls, matrices, gamma=None, period=TWO_PI):
        matrices = np.asarray(matrices, dtype=float)
        n = matrices.shape[-1]
        rows, cols = packed_indices(n)
        sym = 0.5 * (matrices + np.swapaxes(matrices, -1, -2))
        return cls(sym[..., rows, cols], period=period, gamma=gamma)

    @classmethod
    def identity(cls, n, resolution, scale=1.0):
        eye = np.broadcast_to(scale * np.eye(n), (resolution,) * n + (n, n))
        return cls.from_matrices(eye)

    @classmethod
    def zeros(cls, n, resolution):
        return cls(np.zeros((resolution,) * n + (packed_size(n),)))

    def eigenvalue_bounds(self):
        eig = np.linalg.eigvalsh(self.matrices())
        return float(eig[..., 0].min()), float(eig[..., -1].max())

    def check_elliptic(self, gamma=None):
        """Raise unless every node's eigenvalues lie in [γ⁻¹, γ]."""
        gamma = gamma if gamma is not None else self.gamma
        if gamma is None:
            raise ValueError("no ellipticity constant recorded")
        eig = np.linalg.eigvalsh(self.matrices())
        bad = (eig[..., 0] < 1.0 / gamma) | (eig[..., -1] > gamma)
        if np.any(bad):
            node = tuple(int(i) for i in np.argwhere(bad)[0])
            raise ValidationError(
                f"metric not uniformly elliptic at node {node}",
                code="ellipticity",
                params={"node": node, "gamma": gamma},
            )
        return True

    def sup_norm(self):
        """max over nodes of the spectral norm."""
        eig = np.linalg.eigvalsh(self.matrices())
        return float(np.abs(eig).max())

    def __add__(self, other):
        if isinstance(other, MetricField):
            return MetricField(self.values + other.values, period=self.period)
        return super().__add__(other)

    def __sub__(self, other):
        if isinstance(other, MetricField):
            return MetricField(self.values - other.values, period=self.period)
        return super().__sub__(other)

    def scaled(self, factor):
        """Multiply by a scalar or by a k = 1 PeriodicField."""
        if isinstance(factor, PeriodicField):
            factor = factor.values
        return MetricField(self.values * factor, period=self.period)


@dataclass
class HolderReport:
    sup_norm: float
    grad_sup: float
    hess_sup: float
    seminorms: dict = field(default_factory=dict)
    first_seminorm: float = 0.0
    second_seminorm: float = 0.0
    method: str = ""

    def holder_norm(self, j, alpha):
        """‖f‖_{j,α} = ‖f‖_j + [∂^j f]_α; only j = 0 carries seminorm samples."""
        if j != 0:
            raise ValueError("only ‖f‖_{0,α} is sampled")
        return self.sup_norm + self.seminorms[alpha]

    def as_row(self):
        row = {
            "sup_norm": self.sup_norm,
            "grad_sup": self.grad_sup,
            "hess_sup": self.hess_sup,
            "method": self.method,
        }
        for alpha, value in sorted(self.seminorms.items()):
            row[f"seminorm_{alpha:g}"] = value
        return row
