import math

import numpy as np
from django.core.exceptions import ValidationError
from django.conf import settings as django_settings
from django.test import SimpleTestCase, override_settings

from apps.grid.fields import MetricField, PeriodicField, coordinate_grid
from apps.grid.operators import product_embedding

from .pipeline import StageParams, cross_validate, defect_reduction, mollify_triple, run_stage


def flat_data(n, resolution, rho):
    return (
        product_embedding(n, resolution, 0.9),
        PeriodicField.constant(rho, n, resolution),
        MetricField.identity(n, resolution),
        MetricField.zeros(n, resolution),
    )


class StageParamsTests(SimpleTestCase):
    def test_frequency_ladders(self):
        self.assertEqual(StageParams(0.19, 64.0, 1.2).frequencies(), [148])
        self.assertEqual(StageParams(0.19, 64.0, 1.2, branch="nash").frequencies(), [148, 338])
        self.assertEqual(StageParams(0.19, 32.0, 1.2, n=3).frequencies(), [64, 128])
        even = StageParams(0.04, 64.0, 1.2, n=4)
        self.assertEqual(even.omega, 97)
        self.assertEqual(even.frequencies(), [223, 512])
        self.assertEqual(StageParams(0.01, 64.0, 1.2, n=4).frequencies(), [223, 512])

    def test_first_nu_tilde(self):
        self.assertAlmostEqual(StageParams(0.19, 64.0, 1.2).first_nu_tilde, 64.0**1.2)
        self.assertAlmostEqual(StageParams(0.19, 32.0, 1.2, n=3).first_nu_tilde, 64.0)
        self.assertEqual(StageParams(0.04, 64.0, 1.2, n=4).first_nu_tilde, 97.0)
        for params in (StageParams(0.19, 64.0, 1.2), StageParams(0.04, 64.0, 1.2, n=4)):
            self.assertGreaterEqual(params.frequencies()[0], params.first_nu_tilde)

    def test_steps_exponent(self):
        self.assertEqual([StageParams(0.1, 8.0, 1.5, n=n).N for n in (2, 3, 4)], [1.0, 2.0, 2.5])

    def test_out_of_range(self):
        with self.assertRaisesMessage(ValidationError, "stage parameter out of range: kappa"):
            StageParams(0.1, 8.0, 1.0)
        with self.assertRaisesMessage(ValidationError, "branch odd does not apply to n = 2"):
            StageParams(0.1, 8.0, 1.5, branch="odd")
        with self.assertRaisesMessage(ValidationError, "outside the calibrated admissible region"):
            StageParams(0.19, 64.0, 1.2, delta_star=0.1)


class MollifyTripleTests(SimpleTestCase):
    def test_constant_rho_is_unchanged(self):
        rho = PeriodicField.constant(0.3, 2, 32)
        rho_t, _, _, report = mollify_triple(rho, MetricField.identity(2, 32), MetricField.zeros(2, 32), 0.1)
        np.testing.assert_allclose(rho_t.values, rho.values, atol=1e-14)
        self.assertEqual(report.rho_rate, 0.0)

    def test_attenuation_of_oscillating_h(self):
        lam, alpha, resolution = 8.0, 0.5, 64
        ell = lam ** (-1.2)
        x1, _ = coordinate_grid(2, resolution)
        packed = np.zeros((resolution, resolution, 3))
        packed[..., 0] = lam ** (-alpha) * np.sin(lam * x1)
        H = MetricField(packed)
        _, _, H_t, report = mollify_triple(
            PeriodicField.constant(0.3, 2, resolution), MetricField.identity(2, resolution), H, ell
        )
        self.assertLessEqual(report.h_shift, 2.0 * lam ** (1.0 - alpha) * ell)
        self.assertLess(H_t.sup_norm(), H.sup_norm())

    def test_ellipticity_is_preserved(self):
        x1, _ = coordinate_grid(2, 32)
        packed = np.zeros((32, 32, 3))
        packed[..., 0] = 1.0 + 0.3 * np.sin(x1)
        packed[..., 2] = 1.0
        _, G_t, _, report = mollify_triple(
            PeriodicField.constant(0.3, 2, 32), MetricField(packed), MetricField.zeros(2, 32), 0.2
        )
        self.assertTrue(report.ellipticity_preserved)
        low, high = G_t.eigenvalue_bounds()
        self.assertGreaterEqual(low, 0.7 - 1e-12)
        self.assertLessEqual(high, 1.3 + 1e-12)


class RunStageTests(SimpleTestCase):
    def test_vanishing_rho_leaves_embedding(self):
        u, _, G, H = flat_data(2, 32, 0.0)
        rho = PeriodicField.constant(0.0, 2, 32)
        v, error, report = run_stage(u, rho, G, H, StageParams(0.19, 64.0, 1.2))
        np.testing.assert_array_equal(v.values, u.values)
        self.assertEqual(error.sup_norm(), 0.0)
        self.assertTrue(report.support_contained)

    def test_vanishing_rho_on_four_torus(self):
        u, _, G, H = flat_data(4, 16, 0.0)
        rho = PeriodicField.constant(0.0, 4, 16)
        v, error, report = run_stage(u, rho, G, H, StageParams(0.04, 64.0, 1.2, n=4))
        np.testing.assert_array_equal(v.values, u.values)
        self.assertEqual(error.sup_norm(), 0.0)
        self.assertEqual(len(report.steps), 2)
        self.assertIsNotNone(report.absorption)

    def test_four_torus_stage_climbs_above_spirals(self):
        u, rho, G, H = flat_data(4, 16, 0.2)
        v, error, report = run_stage(u, rho, G, H, StageParams(0.04, 64.0, 1.2, n=4))
        self.assertEqual(report.absorption.omega, 97)
        self.assertEqual(report.frequencies, [223, 512])
        self.assertEqual([step.mu for step in report.steps], [223, 512])
        self.assertLessEqual(report.absorption.identity_residual, 1e-10)
        self.assertEqual(v.k, 8)
        self.assertTrue(np.isfinite(report.error_sup))
        self.assertAlmostEqual(report.error_sup, error.sup_norm())

    @override_settings(CORRUGATE={**django_settings.CORRUGATE, "STEP_CONSTANT_C0": 1.005})
    def test_first_step_is_measured_against_mollification_frequency(self):
        u, rho, G, H = flat_data(2, 32, 0.3)
        _, _, report = run_stage(u, rho, G, H, StageParams(0.1, 64.0, 1.2))
        self.assertEqual(report.frequencies, [148])

    @override_settings(CORRUGATE={**django_settings.CORRUGATE, "STEP_CONSTANT_C0": 1.5})
    def test_first_step_below_mollification_frequency_is_rejected(self):
        u, rho, G, H = flat_data(2, 32, 0.3)
        with self.assertRaisesMessage(
            ValidationError, "step hypothesis violated: frequency [stage n=2 conformal, step 1]"
        ):
            run_stage(u, rho, G, H, StageParams(0.1, 64.0, 1.2))
        u, rho, G, H = flat_data(3, 12, 0.2)
        with self.assertRaisesMessage(ValidationError, "step hypothesis violated: frequency [stage n=3 odd, step 1]"):
            run_stage(u, rho, G, H, StageParams(0.05, 2.0, 2.0, n=3))

    def test_single_stage_reduces_defect(self):
        u, rho, G, H = flat_data(2, 64, math.sqrt(1.0 - 0.81))
        v, error, report = run_stage(u, rho, G, H, StageParams(0.19, 64.0, 1.2))
        before, after = defect_reduction(u, G, v)
        self.assertAlmostEqual(before, 0.19, places=10)
        self.assertGreaterEqual(before / after, 4.0)
        self.assertEqual(report.frequencies, [148])
        self.assertEqual(len(report.steps), 1)
        self.assertLessEqual(report.factorization_residual, 1e-10)
        self.assertAlmostEqual(report.error_sup, error.sup_norm())

    def test_conformal_and_nash_branches_agree(self):
        u, rho, G, H = flat_data(2, 128, math.sqrt(0.19))
        ratio, conformal, nash = cross_validate(u, rho, G, H, StageParams(0.19, 4.0, 1.5))
        self.assertEqual(conformal.frequencies, [8])
        self.assertEqual(nash.frequencies, [8, 16])
        self.assertGreaterEqual(ratio, 0.1)
        self.assertLessEqual(ratio, 10.0)

    def test_odd_dimension_ladder(self):
        u, rho, G, H = flat_data(3, 48, math.sqrt(0.05))
        v, error, report = run_stage(u, rho, G, H, StageParams(0.05, 2.0, 2.0, n=3))
        self.assertEqual(report.frequencies, [4, 8])
        self.assertEqual([step.primitives for step in report.steps], [3, 3])
        self.assertEqual(v.k, 6)
        self.assertTrue(np.isfinite(report.error_sup))
        self.assertEqual(set(report.constants), {"displacement_sup", "displacement_c1", "v_c2", "error_sup", "error_c1"})

    def test_hypotheses_are_checked(self):
        u, rho, G, H = flat_data(2, 32, 0.9)
        with self.assertRaisesMessage(ValidationError, "stage hypothesis violated: rho size"):
            run_stage(u, rho, G, H, StageParams(0.01, 64.0, 1.2))
        u, rho, G, _ = flat_data(2, 32, 0.1)
        with self.assertRaisesMessage(ValidationError, "stage hypothesis violated: H size"):
            run_stage(u, rho, G, MetricField.identity(2, 32), StageParams(0.19, 64.0, 1.2))

    def test_step_errors_carry_stage_context(self):
        u, rho, G, H = flat_data(2, 32, 0.6)
        with self.assertRaisesMessage(ValidationError, "corrugation amplitude overflow: reduce δ or rescale [stage n=2 conformal, step 1]"):
            run_stage(u, rho, G, H, StageParams(0.19, 64.0, 1.2))
