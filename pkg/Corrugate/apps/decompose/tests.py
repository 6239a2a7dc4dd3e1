import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from apps.grid.fields import MetricField, coordinate_grid

from .basis import nash_basis, torus_basis, torus_lattice
from .conformal import conformal_factorize
from .decomposition import (
    calibrate_contraction_radius,
    nash_decompose,
    perturbed_decompose,
    reconstruct,
)


def constant_metric(matrix, n=2, resolution=8):
    matrix = np.asarray(matrix, dtype=float)
    return MetricField.from_matrices(np.broadcast_to(matrix, (resolution,) * n + (n, n)))


def metric_from_entries(p11, p12, p22):
    return MetricField.from_matrices(np.stack([np.stack([p11, p12], -1), np.stack([p12, p22], -1)], -2))


class NashBasisTests(SimpleTestCase):
    def test_identity_coefficients(self):
        basis = nash_basis(2)
        np.testing.assert_allclose(basis.coefficients([1.0, 0.0, 1.0]), [1.0, 1.0, 0.0], atol=1e-12)

    def test_off_diagonal_coefficients(self):
        basis = nash_basis(2)
        np.testing.assert_allclose(basis.coefficients([1.0, 0.2, 1.0]), [0.8, 0.8, 0.4], atol=1e-12)

    def test_duals_match_packed_functionals(self):
        basis = nash_basis(3)
        rng = np.random.default_rng(3)
        m = rng.normal(size=(3, 3))
        m = m + m.T
        rows, cols = np.triu_indices(3)
        frobenius = np.einsum("iab,ab->i", basis.duals, m)
        np.testing.assert_allclose(frobenius, basis.coefficients(m[rows, cols]), atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(min_value=2, max_value=4), seed=st.integers(min_value=0, max_value=10**6))
    def test_linearity_and_exact_inverse(self, n, seed):
        basis = nash_basis(n)
        rng = np.random.default_rng(seed)
        rows, cols = np.triu_indices(n)
        p, q = rng.normal(size=(2, len(rows)))
        np.testing.assert_allclose(
            basis.coefficients(p + q), basis.coefficients(p) + basis.coefficients(q), atol=1e-14
        )
        full = np.zeros((n, n))
        full[rows, cols] = p
        full[cols, rows] = p
        np.testing.assert_allclose(basis.reconstruct(basis.coefficients(p)), full, atol=1e-12)

    def test_canonical_frame_radius_degenerates_at_identity(self):
        self.assertEqual(nash_basis(2).sigma0, 0.0)
        self.assertGreater(nash_basis(2, reference=[[1.0, 0.3], [0.3, 1.0]]).sigma0, 0.0)

    def test_reference_must_be_positive_definite(self):
        with self.assertRaisesMessage(ValidationError, "reference matrix must be positive definite"):
            nash_basis(2, reference=[[1.0, 2.0], [2.0, 1.0]])

    def test_torus_frame_has_identity_inside_its_cone(self):
        for n in (2, 3, 4):
            basis = torus_basis(n)
            self.assertGreater(basis.reference_values().min(), 0.0)
            self.assertGreater(basis.sigma0, 0.0)
            self.assertTrue(np.issubdtype(torus_lattice(n).dtype, np.integer))
            self.assertEqual(basis.size, n * (n + 1) // 2)


class NashDecomposeTests(SimpleTestCase):
    def test_scaled_identity(self):
        amplitudes = nash_decompose(constant_metric(2.0 * np.eye(2)), nash_basis(2))
        self.assertEqual(len(amplitudes), 3)
        np.testing.assert_allclose(amplitudes[0].values, np.sqrt(2.0), atol=1e-14)
        np.testing.assert_allclose(amplitudes[1].values, np.sqrt(2.0), atol=1e-14)
        self.assertEqual(np.abs(amplitudes[2].values).max(), 0.0)

    def test_dipped_node_is_named(self):
        matrices = np.broadcast_to(np.eye(2), (8, 8, 2, 2)).copy()
        matrices[3, 5, 0, 1] = matrices[3, 5, 1, 0] = -0.1
        with self.assertRaisesMessage(ValidationError, "oscillation exceeds decomposition radius at node (3, 5)"):
            nash_decompose(MetricField.from_matrices(matrices), nash_basis(2))

    def test_reconstruction_on_random_admissible_metrics(self):
        rng = np.random.default_rng(11)
        for n in (2, 3, 4):
            basis = nash_basis(n)
            resolution = 8
            coeffs = rng.uniform(0.05, 1.0, size=(resolution,) * n + (basis.size,))
            P = MetricField.from_matrices(basis.reconstruct(coeffs))
            amplitudes = nash_decompose(P, basis)
            np.testing.assert_allclose(
                np.concatenate([a.values for a in amplitudes], axis=-1) ** 2, coeffs, atol=1e-12
            )
            self.assertLessEqual(np.abs((reconstruct(amplitudes, basis) - P).values).max(), 1e-10)


class PerturbedDecomposeTests(SimpleTestCase):
    def setUp(self):
        self.basis = nash_basis(2)
        self.P = constant_metric([[1.0, 0.2], [0.2, 1.0]])
        rng = np.random.default_rng(5)
        self.directions = []
        for _ in range(2):
            m = rng.normal(size=(2, 2))
            m = m + m.T
            self.directions.append(m / np.abs(np.linalg.eigvalsh(m)).max())

    def perturbations(self, size):
        lambdas = [constant_metric(size * d) for d in self.directions]
        thetas = [[constant_metric(0.5 * size * d) for d in self.directions] for _ in range(2)]
        return lambdas, thetas

    def test_zero_perturbation_matches_nash_decompose(self):
        lambdas, thetas = self.perturbations(0.0)
        result = perturbed_decompose(self.P, lambdas, thetas, self.basis, 2)
        plain = nash_decompose(self.P, self.basis)
        self.assertEqual(result.iterations, 1)
        for a, b in zip(result.amplitudes, plain):
            np.testing.assert_allclose(a.values, b.values, atol=1e-15)

    def test_small_perturbation_contracts(self):
        lambdas, thetas = self.perturbations(1e-3)
        result = perturbed_decompose(self.P, lambdas, thetas, self.basis, 2)
        self.assertLessEqual(result.iterations, 10)
        self.assertLessEqual(result.residual, 1e-10)
        steps = result.history
        for before, after in zip(steps, steps[1:]):
            if before > 1e-10:
                self.assertLess(after / before, 0.5)

    def test_continuity_in_the_perturbation(self):
        base = perturbed_decompose(self.P, *self.perturbations(1e-3), self.basis, 2)
        for eta in (1e-6, 1e-5):
            moved = perturbed_decompose(self.P, *self.perturbations(1e-3 + eta), self.basis, 2)
            change = max(np.abs(a.values - b.values).max() for a, b in zip(base.amplitudes, moved.amplitudes))
            self.assertLessEqual(change, 10.0 * eta)

    def test_declared_radius_is_enforced(self):
        lambdas, thetas = self.perturbations(1e-2)
        with self.assertRaisesMessage(ValidationError, "perturbation exceeds contraction radius"):
            perturbed_decompose(self.P, lambdas, thetas, self.basis, 2, sigma1=1e-3)

    def test_large_perturbation_fails_loudly(self):
        lambdas = [constant_metric([[0.0, 5.0], [5.0, 0.0]]), constant_metric(np.zeros((2, 2)))]
        thetas = [[constant_metric(np.zeros((2, 2)))] * 2 for _ in range(2)]
        with self.assertRaisesMessage(ValidationError, "perturbation exceeds contraction radius"):
            perturbed_decompose(self.P, lambdas, thetas, self.basis, 2)

    def test_calibrated_radius_is_positive(self):
        sigma1 = calibrate_contraction_radius(torus_basis(2), count=1, seed=7, steps=12)
        self.assertGreater(sigma1, 0.0)
        self.assertTrue(np.isfinite(sigma1))


class ConformalFactorizeTests(SimpleTestCase):
    def test_scaled_identity_is_already_isothermal(self):
        result = conformal_factorize(MetricField.identity(2, 32, scale=1.21))
        np.testing.assert_allclose(result.slopes, np.eye(2), atol=1e-14)
        self.assertLessEqual(np.abs(result.corrections.values).max(), 1e-12)
        np.testing.assert_allclose(result.a.values, 1.1, atol=1e-12)
        self.assertLessEqual(result.residual, 1e-12)

    def test_conformally_flat_metric(self):
        x1, x2 = coordinate_grid(2, 32)
        f = 0.1 * np.sin(x1) * np.sin(x2)
        e = np.exp(2.0 * f)
        result = conformal_factorize(metric_from_entries(e, np.zeros_like(e), e))
        np.testing.assert_allclose(result.slopes, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(result.a.scalar(), np.exp(f), atol=1e-12)

    def test_near_flat_metric(self):
        x1, x2 = coordinate_grid(2, 64)
        P = metric_from_entries(
            1.0 + 0.1 * np.sin(x1) * np.cos(x2),
            0.1 * np.sin(x1 + x2),
            1.0 - 0.1 * np.cos(x1),
        )
        result = conformal_factorize(P)
        self.assertLessEqual(result.residual, 1e-6 * P.sup_norm())
        self.assertGreaterEqual(result.det_min, 0.5)
        self.assertGreaterEqual(result.a_min, 0.5)
        self.assertLessEqual(np.abs((result.reconstruct() - P).values).max(), 1e-6)
        self.assertLessEqual(result.history[-1], 1e-12)

    def test_rejects_indefinite_metric(self):
        matrices = np.broadcast_to(np.eye(2), (16, 16, 2, 2)).copy()
        matrices[2, 7] = [[1.0, 2.0], [2.0, 1.0]]
        with self.assertRaisesMessage(ValidationError, "metric not uniformly elliptic at node (2, 7)"):
            conformal_factorize(MetricField.from_matrices(matrices))

    def test_rejects_strongly_anisotropic_metric(self):
        with self.assertRaisesMessage(ValidationError, "metric too far from conformally flat"):
            conformal_factorize(constant_metric(np.diag([4.0, 1.0]), resolution=16))

    def test_needs_surfaces(self):
        with self.assertRaisesMessage(ValidationError, "conformal factorization needs n = 2"):
            conformal_factorize(constant_metric(np.eye(3), n=3), n=3)
