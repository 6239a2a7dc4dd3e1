import numpy as np
from scipy import optimize


def fit_exponent(xs, ys):
    """Slope of log y against log x."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = (xs > 0) & (ys > 0)
    if keep.sum() < 2:
        raise ValueError("need two positive samples to fit an exponent")
    return float(np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)[0])


def fit_constant(xs, ys, exponent):
    """Smallest C with y ≤ C·x^exponent on the samples."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    return float(np.max(ys / xs**exponent))


def fit_power_plus_floor(xs, ys):
    """Fit y ≈ c₁ x^p + c₂ with c₁, c₂ ≥ 0; returns (c₁, p, c₂)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    p0 = fit_exponent(xs, ys)

    def residual(theta):
        c1, p, c2 = theta
        return np.log(c1 * xs**p + c2) - np.log(ys)

    start = (float(ys[0] / xs[0] ** p0), p0, float(ys.min()) * 1e-3)
    result = optimize.least_squares(
        residual, start, bounds=([1e-300, -10.0, 0.0], [np.inf, 10.0, np.inf])
    )
    return tuple(float(v) for v in result.x)
