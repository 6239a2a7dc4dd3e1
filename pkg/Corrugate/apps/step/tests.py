import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from apps.decompose.basis import torus_basis
from apps.grid.fields import MetricField, PeriodicField, coordinate_grid
from apps.grid.operators import jacobian, product_embedding
from utils.fitting import fit_exponent

from .absorption import apply_absorption_step, cutoff, smooth_step
from .corrugate import Phase, StepInput, apply_step


def seed(resolution=32, epsilon=0.9):
    return product_embedding(2, resolution, epsilon)


def constant(value, resolution=32, n=2):
    return PeriodicField.constant(value, n, resolution)


class PhaseTests(SimpleTestCase):
    def test_linear_phase(self):
        phase = Phase.linear([1, 2])
        x1, x2 = coordinate_grid(2, 16)
        np.testing.assert_allclose(phase.values(2, 16), x1 + 2 * x2)
        np.testing.assert_allclose(phase.gradient(2, 16), np.broadcast_to([1.0, 2.0], (16, 16, 2)))
        self.assertEqual(np.abs(phase.hessian(2, 16)).max(), 0.0)

    def test_correction_enters_gradient(self):
        correction = PeriodicField.from_function(lambda x1, x2: 0.1 * np.sin(x2), 2, 64)
        phase = Phase(np.array([1.0, 0.0]), correction)
        _, x2 = coordinate_grid(2, 64)
        np.testing.assert_allclose(phase.gradient(2, 64)[..., 1], 0.1 * np.cos(x2), atol=1e-5)

    def test_periodicity_at_frequency(self):
        Phase.linear([0.5, 0.0]).check_periodic(40)
        with self.assertRaisesMessage(ValidationError, "phase not periodic at this frequency"):
            Phase.linear([0.5, 0.0]).check_periodic(41)


class ApplyStepTests(SimpleTestCase):
    def test_zero_amplitude_leaves_embedding(self):
        u = seed()
        v, report = apply_step(StepInput(u, [constant(0.0)], [Phase.linear([1, 0])], 40))
        np.testing.assert_array_equal(v.values, u.values)
        self.assertEqual(report.defect_sup, 0.0)
        self.assertTrue(report.support_contained)

    def test_defect_decays_like_inverse_frequency(self):
        mus = [40, 80, 160]
        defects, ratios = [], []
        for mu in mus:
            v, report = apply_step(StepInput(seed(), [constant(0.1)], [Phase.linear([1, 0])], mu))
            defects.append(report.defect_sup)
            ratios.append(report.v_c2 / mu)
            self.assertLessEqual(report.orthogonality_residual, 1e-10)
            self.assertLessEqual(report.tangency_residual, 1e-10)
            self.assertGreater(report.injectivity, 0.0)
        self.assertAlmostEqual(fit_exponent(mus, defects), -1.0, delta=0.15)
        self.assertLessEqual(max(ratios) / min(ratios), 2.0)

    def test_support_is_contained(self):
        x1, _ = coordinate_grid(2, 32)
        amplitude = np.where(x1 < np.pi, 0.1 * np.sin(x1) ** 4, 0.0)
        u = seed()
        v, report = apply_step(StepInput(u, [PeriodicField(amplitude[..., None])], [Phase.linear([0, 1])], 40))
        self.assertTrue(report.support_contained)
        idle = amplitude == 0.0
        np.testing.assert_array_equal(v.values[idle], u.values[idle])

    def test_interaction_scales_quadratically(self):
        deltas = [0.04, 0.01, 0.0025]
        terms = []
        for delta in deltas:
            a = constant(0.5 * np.sqrt(delta))
            step = StepInput(seed(), [a, a], [Phase.linear([1, 0]), Phase.linear([1, 1])], 40)
            terms.append(apply_step(step, measure_c1=False)[1].interaction)
        self.assertAlmostEqual(fit_exponent(deltas, terms), 2.0, delta=0.1)

    def test_chain_rule_jacobian_matches_differences(self):
        u = seed(256)
        amplitude = PeriodicField.from_function(lambda x1, x2: 0.1 + 0.02 * np.sin(x2), 2, 256)
        v, _ = apply_step(StepInput(u, [amplitude], [Phase.linear([1, 0])], 8), measure_c1=False)
        differenced = jacobian(v.without_jets(), accuracy=8)
        self.assertLessEqual(np.abs(differenced - v.jacobian).max(), 1e-5)

    def test_amplitude_overflow(self):
        with self.assertRaisesMessage(ValidationError, "corrugation amplitude overflow"):
            apply_step(StepInput(seed(), [constant(0.7)], [Phase.linear([1, 0])], 40))

    def test_hypotheses_are_checked(self):
        step = StepInput(seed(), [constant(0.5)], [Phase.linear([1, 0])], 40, M=2.0, delta=0.01)
        with self.assertRaisesMessage(ValidationError, "step hypothesis violated: amplitude"):
            apply_step(step)
        step = StepInput(seed(), [constant(0.1)], [Phase.linear([1, 0])], 4, nu_tilde=10.0)
        with self.assertRaisesMessage(ValidationError, "step hypothesis violated: frequency"):
            apply_step(step)
        StepInput(seed(), [constant(0.1)], [Phase.linear([1, 0])], 64, nu_tilde=32.0**1.2).check_hypotheses()

    def test_too_many_primitives(self):
        a = constant(0.1)
        phases = [Phase.linear([1, 0])] * 3
        with self.assertRaises(ValueError):
            apply_step(StepInput(seed(), [a, a, a], phases, 40))


class CutoffTests(SimpleTestCase):
    def test_smooth_step_limits(self):
        np.testing.assert_array_equal(smooth_step(np.array([-1.0, 0.0, 1.0, 2.0])), [0.0, 0.0, 1.0, 1.0])
        self.assertAlmostEqual(float(smooth_step(np.array([0.5]))[0]), 0.5)

    def test_cutoff_shape(self):
        scale = 0.1
        rho = np.linspace(0.0, 0.5, 501)
        psi = cutoff(rho, scale)
        np.testing.assert_allclose(psi[rho <= scale], 1.0 / scale)
        np.testing.assert_allclose(psi[rho >= 2 * scale], 1.0 / rho[rho >= 2 * scale])
        self.assertTrue(np.all(np.diff(psi) <= 1e-12))


class AbsorptionTests(SimpleTestCase):
    def test_vanishing_rho_leaves_embedding(self):
        u = seed()
        G, H = MetricField.identity(2, 32), MetricField.zeros(2, 32)
        u1, leftover, report = apply_absorption_step(
            u, constant(0.0), G, H, torus_basis(2), 64.0, kappa=1.2, delta=0.04
        )
        np.testing.assert_array_equal(u1.values, u.values)
        self.assertEqual(len(leftover), 2)
        for _, amplitude in leftover:
            self.assertEqual(np.abs(amplitude.values).max(), 0.0)

    def test_surface_identity(self):
        u = seed()
        G, H = MetricField.identity(2, 32), MetricField.zeros(2, 32)
        u1, leftover, report = apply_absorption_step(
            u, constant(0.2), G, H, torus_basis(2), 64.0, kappa=1.2, delta=0.04
        )
        self.assertLessEqual(report.decomposition_residual, 1e-8)
        self.assertLessEqual(report.identity_residual, 1e-10)
        self.assertEqual(report.omega, round(64.0**1.1))
        self.assertGreater(report.injectivity, 0.0)

    def test_resolved_spirals(self):
        resolution, lam = 256, 11.0
        u = seed(resolution)
        G, H = MetricField.identity(2, resolution), MetricField.zeros(2, resolution)
        u1, leftover, report = apply_absorption_step(
            u, constant(0.3, resolution), G, H, torus_basis(2), lam, kappa=1.2, delta=0.04
        )
        self.assertEqual(report.omega, 14)
        self.assertLessEqual(max(report.frequencies) * 8, resolution)
        self.assertLessEqual(report.decomposition_residual, 1e-8)
        self.assertLessEqual(report.identity_residual, 1e-10)
        self.assertLessEqual(report.displacement_sup, 2.0 * report.amplitude_max / min(report.frequencies) + 1e-12)
        self.assertGreater(report.injectivity, 0.0)
        self.assertEqual(len(leftover), 2)
        self.assertEqual(u1.k, 4)

    def test_four_torus_identity(self):
        # Both identities hold node by node, whatever the grid spacing.
        u = product_embedding(4, 16, 0.9)
        G, H = MetricField.identity(4, 16), MetricField.zeros(4, 16)
        u1, leftover, report = apply_absorption_step(
            u, constant(0.2, 16, 4), G, H, torus_basis(4), 64.0, kappa=1.2, delta=0.04
        )
        self.assertLessEqual(report.decomposition_residual, 1e-8)
        self.assertLessEqual(report.identity_residual, 1e-10)
        self.assertEqual(len(leftover), 8)
        self.assertEqual(u1.k, 8)

    def test_odd_dimension_rejected(self):
        u = product_embedding(3, 8, 0.9)
        G, H = MetricField.identity(3, 8), MetricField.zeros(3, 8)
        with self.assertRaisesMessage(ValidationError, "absorption needs an even dimension"):
            apply_absorption_step(u, constant(0.2, 8, 3), G, H, torus_basis(3), 64.0, kappa=1.2)
