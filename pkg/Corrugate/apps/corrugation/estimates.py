import logging
import math

import numpy as np

from utils.fitting import fit_constant, fit_exponent

logger = logging.getLogger(__name__)


def estimate_sweep(profile, s_values=None, samples=400):
    """Measured exponents and constants of the Γ bounds over an s-sweep."""
    if s_values is None:
        s_values = np.geomspace(1e-3, profile.s_max, 24)
    t = np.linspace(0.0, 2.0 * math.pi, samples)
    sup1, sup2, sup_ds2, sup_dsdt, sup_dt2 = [], [], [], [], []
    for s in s_values:
        g1, g2 = profile.gamma(s, t)
        partials = profile.partials(s, t)
        sup1.append(np.abs(g1).max())
        sup2.append(np.abs(g2).max())
        sup_ds2.append(np.abs(partials.ds[1]).max())
        sup_dsdt.append(max(np.abs(partials.dsdt[0]).max(), np.abs(partials.dsdt[1]).max()))
        sup_dt2.append(np.abs(partials.dt[1]).max())
    report = {
        "gamma1_exponent": fit_exponent(s_values, sup1),
        "gamma2_exponent": fit_exponent(s_values, sup2),
        "gamma1_constant": fit_constant(s_values, sup1, 2.0),
        "gamma2_constant": fit_constant(s_values, sup2, 1.0),
        "ds_gamma2_sup": float(max(sup_ds2)),
        "dsdt_gamma_sup": float(max(sup_dsdt)),
        "dt_gamma2_monotone": bool(np.all(np.diff(sup_dt2) >= -1e-14)),
        "alpha_slope_max": float(np.max(profile.alpha(s_values) / s_values)),
    }
    logger.info("corrugation estimates: %s", report)
    return report
