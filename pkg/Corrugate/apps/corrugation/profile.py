import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from django.core.exceptions import ValidationError
from scipy import optimize, special
from scipy.interpolate import CubicSpline

from utils.config import get_setting

logger = logging.getLogger(__name__)

J0_FIRST_ZERO = 2.404825557695773
SERIES_TERMS = 24
SLACK = 1e-12


@dataclass
class GammaPartials:
    """Derivatives of Γ = (Γ₁, Γ₂); each entry is a pair of arrays."""

    dt: tuple
    ds: tuple
    dsdt: tuple
    dtt: tuple


class CorrugationProfile:
    """Kuiper profile Γ(s, t) with ∂ₜΓ₁ = c cos(α sin t) − 1, ∂ₜΓ₂ = c sin(α sin t).

    Here c = √(1+s²) and α(s) solves J₀(α)·c = 1, which keeps Γ₁ periodic and
    gives (1+∂ₜΓ₁)² + (∂ₜΓ₂)² = 1 + s² identically.
    """

    def __init__(self, s_max=None, table_size=None, panels=None):
        self.s_max = float(s_max if s_max is not None else get_setting("S_MAX", 0.6))
        self.table_size = int(table_size or get_setting("ALPHA_TABLE_SIZE", 512))
        self.panels = int(panels or get_setting("QUADRATURE_PANELS", 64))
        if not self.s_max > 0.0:
            raise ValidationError("s_max must be positive", code="amplitude_range")
        self.s_table = np.linspace(0.0, self.s_max, self.table_size)
        self.alpha_table = np.array([self.solve_alpha(s) for s in self.s_table])
        self._spline = CubicSpline(self.s_table, self.alpha_table)
        logger.debug("corrugation profile tabulated on %d samples, s_max=%s", self.table_size, self.s_max)

    # --- α(s) -----------------------------------------------------------------

    def check_range(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < -SLACK) or np.any(s > self.s_max + SLACK) or not np.all(np.isfinite(s)):
            worst = float(np.nanmax(np.abs(s))) if s.size else float("nan")
            raise ValidationError(
                "amplitude out of corrugation range",
                code="amplitude_range",
                params={"s": worst, "s_max": self.s_max},
            )
        return np.clip(s, 0.0, self.s_max)

    def solve_alpha(self, s):
        """Bracketed root of J₀(α)√(1+s²) = 1 on [0, j₀,₁)."""
        s = float(self.check_range(s))
        if s == 0.0:
            return 0.0
        c = math.sqrt(1.0 + s * s)

        def closure(a):
            return special.j0(a) * c - 1.0

        low, high = 0.0, J0_FIRST_ZERO
        assert closure(low) > 0.0 > closure(high), "J₀ bracket invalid"
        return optimize.brentq(closure, low, high, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)

    def alpha(self, s):
        """Tabulated α(s), polished by two Newton steps on the closure."""
        s = self.check_range(s)
        c = np.sqrt(1.0 + s * s)
        a = self._spline(s)
        for _ in range(2):
            j1 = special.j1(a)
            step = np.divide(special.j0(a) * c - 1.0, -j1 * c, out=np.zeros_like(a), where=j1 != 0.0)
            a = a - step
        return np.where(s == 0.0, 0.0, a)

    def alpha_prime(self, s):
        """dα/ds = s / ((1+s²)^{3/2} J₁(α)); the s → 0 limit is √2."""
        s = self.check_range(s)
        a = self.alpha(s)
        j1 = special.j1(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            value = s / ((1.0 + s * s) ** 1.5 * j1)
        return np.where(s < 1e-8, math.sqrt(2.0), value)

    # --- Γ and its derivatives ------------------------------------------------

    def gamma(self, s, t):
        """(Γ₁, Γ₂) from the Fourier–Bessel expansion of cos/sin(α sin t)."""
        s, t = np.broadcast_arrays(self.check_range(s), np.asarray(t, dtype=float))
        a = self.alpha(s)
        c = np.sqrt(1.0 + s * s)
        g1 = (c * special.j0(a) - 1.0) * t
        g2 = np.zeros_like(t)
        for k in range(1, SERIES_TERMS + 1):
            g1 = g1 + c * special.jv(2 * k, a) * np.sin(2 * k * t) / k
        for k in range(SERIES_TERMS):
            nu = 2 * k + 1
            g2 = g2 + 2.0 * c * special.jv(nu, a) * (1.0 - np.cos(nu * t)) / nu
        return g1, g2

    def gamma_quadrature(self, s, t):
        """Γ by composite Gauss–Legendre integration of the integrand over [0, t]."""
        s = float(self.check_range(s))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        a = float(self.alpha(s))
        c = math.sqrt(1.0 + s * s)
        nodes, weights = np.polynomial.legendre.leggauss(16)
        out1 = np.zeros_like(t)
        out2 = np.zeros_like(t)
        for idx, end in enumerate(t):
            panels = max(1, int(math.ceil(self.panels * abs(end) / (2 * math.pi))))
            edges = np.linspace(0.0, end, panels + 1)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[1:] + edges[:-1])
            tau = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
            w = (half[:, None] * weights[None, :]).ravel()
            phase = a * np.sin(tau)
            out1[idx] = w @ (c * np.cos(phase) - 1.0)
            out2[idx] = w @ (c * np.sin(phase))
        return out1, out2

    def partials(self, s, t):
        s, t = np.broadcast_arrays(self.check_range(s), np.asarray(t, dtype=float))
        a = self.alpha(s)
        da = self.alpha_prime(s)
        c = np.sqrt(1.0 + s * s)
        dc = s / c
        sin_t, cos_t = np.sin(t), np.cos(t)
        cos_p, sin_p = np.cos(a * sin_t), np.sin(a * sin_t)

        dt = (c * cos_p - 1.0, c * sin_p)
        dtt = (-c * sin_p * a * cos_t, c * cos_p * a * cos_t)
        dsdt = (
            dc * cos_p - c * sin_p * sin_t * da,
            dc * sin_p + c * cos_p * sin_t * da,
        )

        ds1 = (dc * special.j0(a) - c * special.j1(a) * da) * t
        ds2 = np.zeros_like(t)
        for k in range(1, SERIES_TERMS + 1):
            term = dc * special.jv(2 * k, a) + c * special.jvp(2 * k, a) * da
            ds1 = ds1 + term * np.sin(2 * k * t) / k
        for k in range(SERIES_TERMS):
            nu = 2 * k + 1
            term = dc * special.jv(nu, a) + c * special.jvp(nu, a) * da
            ds2 = ds2 + 2.0 * term * (1.0 - np.cos(nu * t)) / nu
        return GammaPartials(dt=dt, ds=(ds1, ds2), dsdt=dsdt, dtt=dtt)

    # --- audits ----------------------------------------------------------------

    def identity_residual(self, s, t):
        d1, d2 = self.partials(s, t).dt
        s = np.broadcast_to(np.asarray(s, dtype=float), np.shape(d1))
        return np.abs((1.0 + d1) ** 2 + d2**2 - (1.0 + s * s))

    def periodicity_residual(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        start = self.gamma(s, np.zeros_like(s))
        end = self.gamma(s, np.full_like(s, 2.0 * math.pi))
        return np.maximum(np.abs(end[0] - start[0]), np.abs(end[1] - start[1]))

    def table_rows(self):
        derivative = self.alpha_prime(self.s_table)
        return [
            {"s": float(s), "alpha": float(a), "alpha_prime": float(d)}
            for s, a, d in zip(self.s_table, self.alpha_table, derivative)
        ]


@lru_cache(maxsize=4)
def _cached_profile(s_max, table_size, panels):
    return CorrugationProfile(s_max, table_size, panels)


def default_profile():
    """Profile built once per configuration."""
    return _cached_profile(
        float(get_setting("S_MAX", 0.6)),
        int(get_setting("ALPHA_TABLE_SIZE", 512)),
        int(get_setting("QUADRATURE_PANELS", 64)),
    )


def solve_alpha(s):
    return default_profile().solve_alpha(s)


def gamma_eval(s, t):
    return default_profile().gamma(s, t)


def gamma_partials(s, t):
    return default_profile().partials(s, t)
