import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from scipy import special

from .estimates import estimate_sweep
from .profile import CorrugationProfile, default_profile, gamma_eval, gamma_partials, solve_alpha


class AlphaTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.profile = CorrugationProfile(s_max=0.6)

    def test_zero_amplitude(self):
        self.assertEqual(self.profile.solve_alpha(0.0), 0.0)
        self.assertEqual(float(self.profile.alpha(0.0)), 0.0)

    def test_small_amplitude_value(self):
        alpha = self.profile.solve_alpha(0.1)
        self.assertAlmostEqual(alpha, 0.141, delta=1e-3)
        self.assertLess(abs(special.j0(alpha) * math.sqrt(1.01) - 1.0), 1e-12)

    def test_largest_amplitude_stays_below_first_zero(self):
        alpha = self.profile.solve_alpha(self.profile.s_max)
        self.assertLess(alpha, 2.405)
        self.assertLessEqual(alpha, 1.6 * self.profile.s_max)

    def test_out_of_range(self):
        for s in (-0.01, 0.61):
            with self.assertRaisesMessage(ValidationError, "amplitude out of corrugation range"):
                self.profile.solve_alpha(s)

    def test_default_range_admits_one_pass_on_flat_seed(self):
        # A 0.9-scaled flat torus closes its 0.19 defect with a single corrugation.
        s = math.sqrt(0.19) / 0.9
        self.assertGreater(s, 0.4)
        profile = default_profile()
        self.assertGreaterEqual(profile.s_max, s)
        self.assertEqual(float(profile.check_range(s)), s)

    def test_table_is_monotone_and_matches_root_find(self):
        self.assertTrue(np.all(np.diff(self.profile.alpha_table) > 0))
        s = np.linspace(0.013, 0.59, 37)
        direct = np.array([self.profile.solve_alpha(v) for v in s])
        np.testing.assert_allclose(self.profile.alpha(s), direct, atol=1e-13)

    def test_derivative_of_alpha(self):
        s = np.array([0.05, 0.2, 0.45])
        h = 1e-6
        fd = (self.profile.alpha(s + h) - self.profile.alpha(s - h)) / (2 * h)
        np.testing.assert_allclose(self.profile.alpha_prime(s), fd, rtol=1e-7)
        self.assertAlmostEqual(float(self.profile.alpha_prime(0.0)), math.sqrt(2.0))


class GammaTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.profile = CorrugationProfile(s_max=0.4)

    def test_zero_amplitude_vanishes(self):
        t = np.linspace(0, 2 * math.pi, 50)
        g1, g2 = self.profile.gamma(0.0, t)
        self.assertEqual(np.abs(g1).max(), 0.0)
        self.assertEqual(np.abs(g2).max(), 0.0)
        self.assertEqual(np.abs(self.profile.partials(0.0, t).dt[1]).max(), 0.0)

    def test_defining_identity_on_grid(self):
        s, t = np.meshgrid(np.linspace(0, 0.4, 50), np.linspace(0, 2 * math.pi, 200), indexing="ij")
        self.assertLessEqual(self.profile.identity_residual(s, t).max(), 1e-8)

    def test_periodicity(self):
        self.assertLessEqual(self.profile.periodicity_residual(self.profile.s_table).max(), 1e-10)

    def test_series_matches_quadrature(self):
        t = np.linspace(0.0, 2 * math.pi, 33)
        for s in (0.05, 0.25, 0.4):
            series = self.profile.gamma(s, t)
            quad = self.profile.gamma_quadrature(s, t)
            np.testing.assert_allclose(series[0], quad[0], atol=1e-12)
            np.testing.assert_allclose(series[1], quad[1], atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(s=st.floats(min_value=0.01, max_value=0.39), t=st.floats(min_value=0.0, max_value=6.28))
    def test_s_derivative_matches_central_difference(self, s, t):
        h = 1e-5
        exact = self.profile.partials(s, t).ds
        plus = self.profile.gamma(s + h, t)
        minus = self.profile.gamma(s - h, t)
        for i in range(2):
            self.assertLessEqual(abs(float(exact[i]) - float((plus[i] - minus[i]) / (2 * h))), 1e-6)

    def test_t_derivatives_match_central_difference(self):
        s, h = 0.3, 1e-5
        t = np.linspace(0.1, 6.0, 17)
        partials = self.profile.partials(s, t)
        plus, minus = self.profile.gamma(s, t + h), self.profile.gamma(s, t - h)
        for i in range(2):
            np.testing.assert_allclose(partials.dt[i], (plus[i] - minus[i]) / (2 * h), atol=1e-8)
        dplus, dminus = self.profile.partials(s, t + h).dt, self.profile.partials(s, t - h).dt
        for i in range(2):
            np.testing.assert_allclose(partials.dtt[i], (dplus[i] - dminus[i]) / (2 * h), atol=1e-8)
        splus, sminus = self.profile.partials(s + h, t).dt, self.profile.partials(s - h, t).dt
        for i in range(2):
            np.testing.assert_allclose(partials.dsdt[i], (splus[i] - sminus[i]) / (2 * h), atol=1e-8)

    def test_estimate_sweep(self):
        report = estimate_sweep(self.profile)
        self.assertAlmostEqual(report["gamma1_exponent"], 2.0, delta=0.1)
        self.assertAlmostEqual(report["gamma2_exponent"], 1.0, delta=0.1)
        self.assertTrue(report["dt_gamma2_monotone"])
        self.assertLess(report["ds_gamma2_sup"], 10.0)
        self.assertLessEqual(report["alpha_slope_max"], 1.6)


class ModuleHelpersTests(SimpleTestCase):
    def test_helpers_use_configured_profile(self):
        self.assertIs(default_profile(), default_profile())
        self.assertAlmostEqual(solve_alpha(0.1), default_profile().solve_alpha(0.1))
        g1, g2 = gamma_eval(0.2, np.array([0.0]))
        self.assertEqual(float(g1[0]), 0.0)
        self.assertEqual(float(g2[0]), 0.0)
        self.assertEqual(len(gamma_partials(0.2, 1.0).dt), 2)

    def test_table_rows(self):
        rows = CorrugationProfile(s_max=0.4, table_size=16).table_rows()
        self.assertEqual(len(rows), 16)
        self.assertEqual(rows[0]["alpha"], 0.0)
