import itertools
import logging
import math
from functools import lru_cache

import numpy as np
from django.core.exceptions import ValidationError

from utils.config import get_setting

from .fields import HolderReport, MetricField, PeriodicField, TWO_PI, coordinate_grid, packed_indices

logger = logging.getLogger(__name__)

# Centered periodic stencils, coefficients of f(x + jh) for j = 1..p/2.
# First derivative: Σ c_j (f(x+jh) − f(x−jh)) / h.
FIRST_DERIVATIVE = {
    2: (1 / 2,),
    4: (2 / 3, -1 / 12),
    6: (3 / 4, -3 / 20, 1 / 60),
    8: (4 / 5, -1 / 5, 4 / 105, -1 / 280),
}
# Second derivative: (c_0 f(x) + Σ c_j (f(x+jh) + f(x−jh))) / h².
SECOND_DERIVATIVE = {
    2: (-2.0, (1.0,)),
    4: (-5 / 2, (4 / 3, -1 / 12)),
    6: (-49 / 18, (3 / 2, -3 / 20, 1 / 90)),
    8: (-205 / 72, (8 / 5, -1 / 5, 8 / 315, -1 / 560)),
}


def _accuracy(accuracy):
    accuracy = accuracy or get_setting("STENCIL_ACCURACY", 4)
    if accuracy not in FIRST_DERIVATIVE:
        raise ValueError(f"stencil accuracy must be one of {sorted(FIRST_DERIVATIVE)}")
    return accuracy


def _check_width(resolution, accuracy):
    if resolution < accuracy + 1:
        raise ValidationError(
            "grid too coarse",
            code="grid_too_coarse",
            params={"R": resolution, "accuracy": accuracy},
        )


def derivative_array(array, axis, order, spacing, accuracy=None):
    """Periodic centered difference of a raw array along a spatial axis."""
    accuracy = _accuracy(accuracy)
    _check_width(array.shape[axis], accuracy)
    if order == 1:
        out = np.zeros_like(array)
        for j, c in enumerate(FIRST_DERIVATIVE[accuracy], start=1):
            out += c * (np.roll(array, -j, axis=axis) - np.roll(array, j, axis=axis))
        return out / spacing
    if order == 2:
        center, coeffs = SECOND_DERIVATIVE[accuracy]
        out = center * array
        for j, c in enumerate(coeffs, start=1):
            out = out + c * (np.roll(array, -j, axis=axis) + np.roll(array, j, axis=axis))
        return out / spacing**2
    raise ValueError("order must be 1 or 2")


def gradient_array(array, n, spacing, accuracy=None):
    """∇ of an array shaped (R,)*n + tail, returned as (R,)*n + tail + (n,)."""
    return np.stack(
        [derivative_array(array, axis, 1, spacing, accuracy) for axis in range(n)], axis=-1
    )


def diff(f, axis, order=1, accuracy=None):
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if not 0 <= axis < f.n:
        raise ValueError(f"axis {axis} outside 0..{f.n - 1}")
    return PeriodicField(
        derivative_array(f.values, axis, order, f.spacing, accuracy), period=f.period
    )


def jacobian(f, accuracy=None):
    """(…, k, n) first derivatives; exact jets win over differences."""
    if f.jacobian is not None:
        return f.jacobian
    return gradient_array(f.values, f.n, f.spacing, accuracy)


def hessian(f, accuracy=None):
    if f.hessian is not None:
        return f.hessian
    n = f.n
    if f.jacobian is not None:
        hes = gradient_array(f.jacobian, n, f.spacing, accuracy)
        return 0.5 * (hes + np.swapaxes(hes, -1, -2))
    out = np.zeros(f.values.shape + (n, n))
    for i in range(n):
        out[..., i, i] = derivative_array(f.values, i, 2, f.spacing, accuracy)
        first = derivative_array(f.values, i, 1, f.spacing, accuracy)
        for j in range(i + 1, n):
            out[..., i, j] = out[..., j, i] = derivative_array(first, j, 1, f.spacing, accuracy)
    return out


def gram(jac):
    return np.einsum("...ki,...kj->...ij", jac, jac)


def induced_metric(u, accuracy=None):
    if u.k < u.n:
        raise ValueError("an immersion of T^n needs at least n components")
    return MetricField.from_matrices(gram(jacobian(u, accuracy)), period=u.period)


# --- mollification -----------------------------------------------------------

def bump(x):
    """exp(−1/(1−x²)) on (−1, 1), zero outside; not normalized."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _bump_quadrature(panels=16, order=48):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-1.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    y = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel() * bump(y)
    return y, w / w.sum()


def bump_transform(xi):
    """φ̂(ξ) = ∫ φ(y) cos(ξy) dy for the unit-mass bump, so φ̂(0) = 1."""
    y, w = _bump_quadrature()
    xi = np.asarray(xi, dtype=float)
    return np.cos(np.multiply.outer(xi, y)) @ w


def _mollifier_multiplier(n, resolution, ell, period):
    wavenumbers = np.fft.fftfreq(resolution, d=1.0 / resolution) * (TWO_PI / period)
    factor = bump_transform(wavenumbers * ell)
    multiplier = np.ones((resolution,) * n)
    for axis in range(n):
        shape = [1] * n
        shape[axis] = resolution
        multiplier = multiplier * factor.reshape(shape)
    return multiplier


def _convolve(array, multiplier, n):
    axes = tuple(range(n))
    spectrum = np.fft.fftn(array, axes=axes)
    extra = array.ndim - n
    spectrum *= multiplier.reshape(multiplier.shape + (1,) * extra)
    return np.fft.ifftn(spectrum, axes=axes).real


def mollify(f, ell):
    """Convolve with the tensorized bump scaled to ℓ.

    The convolution acts on the trigonometric interpolant of the samples, so the
    result is the exact mollification of that interpolant at the nodes. Jets are
    mollified alongside the values.
    """
    if not (ell > 0.0 and ell < f.period / 4.0):
        raise ValidationError(
            "invalid mollification scale", code="mollification_scale", params={"ell": ell}
        )
    multiplier = _mollifier_multiplier(f.n, f.resolution, ell, f.period)
    values = _convolve(f.values, multiplier, f.n)
    jac = None if f.jacobian is None else _convolve(f.jacobian, multiplier, f.n)
    hes = None if f.hessian is None else _convolve(f.hessian, multiplier, f.n)
    if isinstance(f, MetricField):
        return MetricField(values, period=f.period, gamma=f.gamma)
    return PeriodicField(values, jac, hes, f.period)


def commutator_defect(f1, f2, ell):
    """‖(f₁f₂)*φ_ℓ − (f₁*φ_ℓ)(f₂*φ_ℓ)‖₀ for scalar fields."""
    product = PeriodicField(f1.values * f2.values, period=f1.period)
    mixed = mollify(product, ell).values - mollify(f1, ell).values * mollify(f2, ell).values
    return float(np.abs(mixed).max())


# --- norms ---------------------------------------------------------------------

def pointwise_norm(array, metric=False, n=None):
    """|f(x)| per node: Euclidean over components, spectral for packed metrics."""
    if metric:
        rows, cols = packed_indices(n)
        full = np.zeros(array.shape[:-1] + (n, n))
        full[..., rows, cols] = array
        full[..., cols, rows] = array
        return np.abs(np.linalg.eigvalsh(full)).max(axis=-1)
    return np.sqrt(np.sum(array**2, axis=-1))


def _holder_offsets(n, spacing, radius):
    radius = max(radius, spacing)
    reach = max(1, int(math.floor(radius / spacing)))
    offsets = []
    for d in itertools.product(range(-reach, reach + 1), repeat=n):
        if d <= (0,) * n:
            continue  # ±d give the same pairs
        dist = spacing * math.sqrt(sum(c * c for c in d))
        if dist <= radius + 1e-12:
            offsets.append((d, dist))
    return offsets


def holder_seminorm(f, alpha, radius=None, budget=None):
    if not 0.0 < alpha <= 1.0:
        raise ValidationError("Hölder exponent must lie in (0, 1]", code="holder_exponent")
    radius = radius if radius is not None else get_setting("HOLDER_RADIUS", 0.25)
    budget = budget if budget is not None else get_setting("HOLDER_PAIR_BUDGET", 10**6)
    metric = isinstance(f, MetricField)
    offsets = _holder_offsets(f.n, f.spacing, radius)
    nodes = f.resolution**f.n
    stride = 1
    while len(offsets) * math.ceil(f.resolution / stride) ** f.n > budget and stride < f.resolution:
        stride += 1
    base = f.values[(slice(None, None, stride),) * f.n]
    best = 0.0
    for d, dist in offsets:
        shifted = np.roll(f.values, shift=[-c for c in d], axis=tuple(range(f.n)))
        shifted = shifted[(slice(None, None, stride),) * f.n]
        jump = pointwise_norm(shifted - base, metric, f.n).max()
        best = max(best, float(jump) / dist**alpha)
    logger.debug("seminorm α=%s over %d offsets, stride %d of %d nodes", alpha, len(offsets), stride, nodes)
    return best


def holder_norms(f, alphas=(), accuracy=None):
    """Cumulative norms ‖f‖₀ ≤ ‖f‖₁ ≤ ‖f‖₂ plus sampled seminorms [f]_α."""
    for alpha in alphas:
        if not 0.0 < alpha <= 1.0:
            raise ValidationError("Hölder exponent must lie in (0, 1]", code="holder_exponent")
    accuracy = _accuracy(accuracy)
    metric = isinstance(f, MetricField)
    sup = float(pointwise_norm(f.values, metric, f.n).max())
    first = 0.0
    second = 0.0
    for i in range(f.n):
        d_i = derivative_array(f.values, i, 1, f.spacing, accuracy)
        first = max(first, float(pointwise_norm(d_i, metric, f.n).max()))
        for j in range(f.n):
            if i == j:
                d_ij = derivative_array(f.values, i, 2, f.spacing, accuracy)
            else:
                d_ij = derivative_array(d_i, j, 1, f.spacing, accuracy)
            second = max(second, float(pointwise_norm(d_ij, metric, f.n).max()))
    seminorms = {alpha: holder_seminorm(f, alpha) for alpha in alphas}
    return HolderReport(
        sup_norm=sup,
        grad_sup=sup + first,
        hess_sup=sup + first + second,
        seminorms=seminorms,
        first_seminorm=first,
        second_seminorm=second,
        method=f"centered periodic differences, order {accuracy}",
    )


def jet_norms(u):
    """(‖u‖₀, [u]₁, [u]₂) from attached jets, differences where jets are missing."""
    sup = float(pointwise_norm(u.values).max())
    jac = jacobian(u)
    hes = hessian(u)
    first = float(np.sqrt(np.sum(jac**2, axis=(-2, -1))).max())
    second = float(np.sqrt(np.sum(hes**2, axis=(-3, -2, -1))).max())
    return sup, first, second


def interpolation_ratio(f, alpha=0.5):
    """‖f‖_{0,α} / (‖f‖₀^{1−α} ‖f‖₁^α); bounded by the interpolation constant."""
    report = holder_norms(f, [alpha])
    denominator = report.sup_norm ** (1.0 - alpha) * report.grad_sup**alpha
    if denominator == 0.0:
        return 0.0
    return report.holder_norm(0, alpha) / denominator


def torus_distance(index_a, index_b, resolution, spacing):
    delta = np.abs(np.asarray(index_a) - np.asarray(index_b))
    delta = np.minimum(delta, resolution - delta)
    return spacing * np.sqrt(np.sum(delta**2, axis=-1))


def injectivity_margin(u, pairs=None, seed=None):
    """min |u(x) − u(y)| / d(x, y) over neighbour offsets and seeded global pairs."""
    pairs = pairs if pairs is not None else get_setting("INJECTIVITY_PAIRS", 20000)
    seed = seed if seed is not None else get_setting("SEED", 0)
    n, resolution, spacing = u.n, u.resolution, u.spacing
    margin = math.inf
    for d in itertools.product((-1, 0, 1), repeat=n):
        if d <= (0,) * n:
            continue
        shifted = np.roll(u.values, shift=[-c for c in d], axis=tuple(range(n)))
        ratio = pointwise_norm(shifted - u.values).min() / (spacing * math.sqrt(sum(c * c for c in d)))
        margin = min(margin, float(ratio))
    if pairs:
        rng = np.random.default_rng(seed)
        a = rng.integers(0, resolution, size=(pairs, n))
        b = rng.integers(0, resolution, size=(pairs, n))
        distinct = np.any(a != b, axis=1)
        a, b = a[distinct], b[distinct]
        va = u.values[tuple(a.T)]
        vb = u.values[tuple(b.T)]
        ratios = np.sqrt(np.sum((va - vb) ** 2, axis=-1)) / torus_distance(a, b, resolution, spacing)
        if ratios.size:
            margin = min(margin, float(ratios.min()))
    return margin


# --- reference embeddings --------------------------------------------------------

def product_embedding(n, resolution, epsilon):
    """ε·(cos x₁, sin x₁, …, cos xₙ, sin xₙ) with exact jets; induces ε²·Id."""
    coords = coordinate_grid(n, resolution)
    shape = (resolution,) * n
    values = np.zeros(shape + (2 * n,))
    jac = np.zeros(shape + (2 * n, n))
    hes = np.zeros(shape + (2 * n, n, n))
    for i, x in enumerate(coords):
        c, s = np.cos(x), np.sin(x)
        values[..., 2 * i] = epsilon * c
        values[..., 2 * i + 1] = epsilon * s
        jac[..., 2 * i, i] = -epsilon * s
        jac[..., 2 * i + 1, i] = epsilon * c
        hes[..., 2 * i, i, i] = -epsilon * c
        hes[..., 2 * i + 1, i, i] = -epsilon * s
    return PeriodicField(values, jac, hes)
