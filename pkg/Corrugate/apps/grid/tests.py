import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from scipy import integrate

from .fields import MetricField, PeriodicField, coordinate_grid
from .io import dump_field, field_to_csv, load_field, write_obj, write_ply
from .operators import (
    bump,
    commutator_defect,
    diff,
    holder_norms,
    induced_metric,
    injectivity_margin,
    interpolation_ratio,
    jacobian,
    mollify,
    product_embedding,
)


def _fit_slope(xs, ys):
    return np.polyfit(np.log(xs), np.log(ys), 1)[0]


def _bump_coefficient(xi):
    """Independent oracle: φ̂(ξ) by adaptive quadrature."""
    mass = integrate.quad(lambda y: bump(np.array([y]))[0], -1, 1, epsabs=1e-14)[0]
    value = integrate.quad(
        lambda y: bump(np.array([y]))[0] * math.cos(xi * y), -1, 1, epsabs=1e-14, limit=200
    )[0]
    return value / mass


class PeriodicFieldTests(SimpleTestCase):
    def test_rejects_non_finite_samples(self):
        values = np.zeros((8, 8, 1))
        values[3, 4, 0] = np.nan
        with self.assertRaisesMessage(ValidationError, "non-finite sample at node (3, 4)"):
            PeriodicField(values)

    def test_rejects_empty_and_coarse_grids(self):
        with self.assertRaisesMessage(ValidationError, "empty field"):
            PeriodicField(np.zeros((0, 0, 1)))
        with self.assertRaisesMessage(ValidationError, "grid too coarse"):
            PeriodicField(np.zeros((4, 4, 1)))

    def test_metric_packing_is_symmetric(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(8, 8, 3, 3))
        metric = MetricField.from_matrices(a)
        full = metric.matrices()
        np.testing.assert_array_equal(full, np.swapaxes(full, -1, -2))
        np.testing.assert_allclose(full, 0.5 * (a + np.swapaxes(a, -1, -2)))

    def test_check_elliptic_names_the_node(self):
        mats = np.broadcast_to(np.eye(2), (8, 8, 2, 2)).copy()
        mats[2, 5] = np.diag([1.0, 10.0])
        with self.assertRaisesMessage(ValidationError, "(2, 5)"):
            MetricField.from_matrices(mats, gamma=2.0).check_elliptic()


class DiffTests(SimpleTestCase):
    def test_constant_has_zero_derivative(self):
        f = PeriodicField.constant(3.5, 2, 32)
        self.assertEqual(np.abs(diff(f, 0).values).max(), 0.0)
        self.assertEqual(np.abs(diff(f, 1, order=2).values).max(), 0.0)

    def test_sine_derivative_matches_analytic(self):
        f = PeriodicField.from_function(lambda x, y: np.sin(3 * x), 2, 256)
        x, _ = coordinate_grid(2, 256)
        d0 = diff(f, 0, accuracy=6).scalar()
        self.assertLess(np.abs(d0 - 3 * np.cos(3 * x)).max(), 1e-6)
        self.assertLess(np.abs(diff(f, 1).values).max(), 1e-12)

    def test_second_derivative(self):
        f = PeriodicField.from_function(lambda x, y: np.cos(2 * y), 2, 128)
        _, y = coordinate_grid(2, 128)
        err = np.abs(diff(f, 1, order=2).scalar() + 4 * np.cos(2 * y)).max()
        self.assertLess(err, 1e-5)

    def test_too_coarse_for_stencil(self):
        f = PeriodicField.constant(1.0, 2, 8)
        with self.assertRaisesMessage(ValidationError, "grid too coarse"):
            diff(f, 0, accuracy=8)

    @settings(max_examples=20, deadline=None)
    @given(shift=st.integers(min_value=0, max_value=31), axis=st.integers(min_value=0, max_value=1))
    def test_diff_commutes_with_grid_translation(self, shift, axis):
        rng = np.random.default_rng(7)
        f = PeriodicField(rng.normal(size=(32, 32, 2)))
        moved = PeriodicField(np.roll(f.values, shift, axis=0))
        np.testing.assert_array_equal(
            diff(moved, axis).values, np.roll(diff(f, axis).values, shift, axis=0)
        )


class InducedMetricTests(SimpleTestCase):
    def test_product_embedding_induces_scaled_identity(self):
        u = product_embedding(2, 32, 0.9)
        g = induced_metric(u).matrices()
        np.testing.assert_allclose(g, np.broadcast_to(0.81 * np.eye(2), g.shape), atol=1e-14)

    def test_finite_differences_agree_without_jets(self):
        u = product_embedding(2, 64, 0.9).without_jets()
        g = induced_metric(u).matrices()
        np.testing.assert_allclose(g, np.broadcast_to(0.81 * np.eye(2), g.shape), atol=1e-5)

    def test_affine_stub_away_from_seam(self):
        a = np.array([[1.0, 0.5], [0.0, 2.0], [1.0, -1.0]])
        x, y = coordinate_grid(2, 32)
        values = np.stack([a[r, 0] * x + a[r, 1] * y for r in range(3)], axis=-1)
        g = induced_metric(PeriodicField(values)).matrices()
        np.testing.assert_allclose(g[4:-4, 4:-4], np.broadcast_to(a.T @ a, (24, 24, 2, 2)), atol=1e-10)

    def test_constant_map_induces_zero(self):
        u = PeriodicField.constant(np.ones(4), 2, 16, k=4)
        self.assertEqual(np.abs(induced_metric(u).values).max(), 0.0)

    def test_induced_metric_is_positive_semidefinite(self):
        rng = np.random.default_rng(3)
        u = PeriodicField.from_function(
            lambda x, y: np.stack([np.sin(x + y), np.cos(2 * x), rng.normal() * np.sin(y), np.cos(x - y)], -1),
            2,
            32,
        )
        low, _ = induced_metric(u).eigenvalue_bounds()
        self.assertGreaterEqual(low, -1e-12)


class HolderNormTests(SimpleTestCase):
    def test_constant(self):
        report = holder_norms(PeriodicField.constant(-2.0, 2, 32), [0.5, 1.0])
        self.assertAlmostEqual(report.sup_norm, 2.0)
        self.assertEqual(report.seminorms[0.5], 0.0)
        self.assertEqual(report.seminorms[1.0], 0.0)

    def test_lipschitz_constant_of_sine(self):
        f = PeriodicField.from_function(lambda x, y: np.sin(x), 2, 64)
        report = holder_norms(f, [1.0])
        self.assertAlmostEqual(report.seminorms[1.0], 1.0, delta=0.05)
        self.assertLessEqual(report.sup_norm, report.grad_sup)
        self.assertLessEqual(report.grad_sup, report.hess_sup)

    def test_interpolation_inequality(self):
        f = PeriodicField.from_function(lambda x, y: np.sin(5 * x), 2, 128)
        self.assertLessEqual(interpolation_ratio(f, 0.5), 2.0)

    def test_rejects_bad_exponent(self):
        with self.assertRaises(ValidationError):
            holder_norms(PeriodicField.constant(1.0, 2, 16), [1.5])

    def test_budget_keeps_result_deterministic(self):
        f = PeriodicField.from_function(lambda x, y: np.sin(x) * np.cos(y), 2, 256)
        first = holder_norms(f, [0.5]).seminorms[0.5]
        second = holder_norms(f, [0.5]).seminorms[0.5]
        self.assertEqual(first, second)


class MollifyTests(SimpleTestCase):
    def test_constant_is_preserved(self):
        f = PeriodicField.constant(1.7, 2, 32)
        np.testing.assert_allclose(mollify(f, 0.3).values, 1.7, atol=1e-12)

    def test_sine_is_attenuated_by_kernel_coefficient(self):
        k, ell = 4, 0.35
        f = PeriodicField.from_function(lambda x, y: np.sin(k * x), 2, 64)
        x, _ = coordinate_grid(2, 64)
        expected = _bump_coefficient(k * ell) * np.sin(k * x)
        np.testing.assert_allclose(mollify(f, ell).scalar(), expected, atol=1e-10)

    def test_invalid_scale(self):
        f = PeriodicField.constant(1.0, 2, 16)
        for ell in (0.0, -0.1, math.pi / 2, 2.0):
            with self.assertRaisesMessage(ValidationError, "invalid mollification scale"):
                mollify(f, ell)

    def test_mean_is_preserved(self):
        rng = np.random.default_rng(11)
        f = PeriodicField(rng.uniform(-1, 1, size=(64, 64, 1)))
        self.assertAlmostEqual(mollify(f, 0.4).values.mean(), f.values.mean(), places=12)

    def test_sup_norm_does_not_grow(self):
        def poly(x, y):
            return np.sin(x) * np.cos(2 * y) + 0.5 * np.sin(3 * x + y)

        f = PeriodicField.from_function(poly, 2, 64)
        fine = np.linspace(0, 2 * np.pi, 1024, endpoint=False)
        continuum_sup = np.abs(poly(*np.meshgrid(fine, fine, indexing="ij"))).max()
        self.assertLessEqual(np.abs(mollify(f, 0.4).values).max(), continuum_sup + 1e-3)

    @settings(max_examples=15, deadline=None)
    @given(
        a=st.floats(min_value=-3, max_value=3),
        b=st.floats(min_value=-3, max_value=3),
        ell=st.floats(min_value=0.1, max_value=1.2),
    )
    def test_linearity(self, a, b, ell):
        f1 = PeriodicField.from_function(lambda x, y: np.sin(x) * np.cos(2 * y), 2, 32)
        f2 = PeriodicField.from_function(lambda x, y: np.cos(3 * x + y), 2, 32)
        combined = PeriodicField(a * f1.values + b * f2.values)
        expected = a * mollify(f1, ell).values + b * mollify(f2, ell).values
        np.testing.assert_allclose(mollify(combined, ell).values, expected, atol=1e-10)

    def test_jets_are_mollified(self):
        u = product_embedding(2, 32, 1.0)
        smooth = mollify(u, 0.2)
        np.testing.assert_allclose(smooth.jacobian, jacobian(smooth.without_jets()), atol=1e-4)

    def test_quadratic_rate_on_trigonometric_polynomial(self):
        f = PeriodicField.from_function(lambda x, y: np.sin(2 * x) + 0.5 * np.cos(y), 2, 64)
        scales = np.array([0.02, 0.04, 0.08, 0.16])
        errors = [np.abs(mollify(f, ell).values - f.values).max() for ell in scales]
        self.assertAlmostEqual(_fit_slope(scales, errors), 2.0, delta=0.15)

    def test_distance_to_mollified_is_linear_in_scale(self):
        f = PeriodicField.from_function(lambda x, y: np.sin(3 * x), 2, 128)
        lipschitz = 3.0
        for ell in (0.05, 0.1, 0.2, 0.4):
            err = np.abs(mollify(f, ell).values - f.values).max()
            self.assertLessEqual(err, ell * lipschitz)

    def test_derivative_gain_scales_inverse_to_scale(self):
        f = PeriodicField.from_function(lambda x, y: np.sign(np.sin(x)), 2, 256)
        scales = np.array([0.1, 0.2, 0.4, 0.8])
        grads = [holder_norms(mollify(f, ell)).first_seminorm for ell in scales]
        self.assertAlmostEqual(_fit_slope(scales, grads), -1.0, delta=0.15)

    def test_commutator_exponent(self):
        f = PeriodicField.from_function(lambda x, y: np.sqrt(np.abs(np.sin(x))), 2, 256)
        scales = np.array([0.1, 0.2, 0.4])
        defects = [commutator_defect(f, f, ell) for ell in scales]
        # [f]_{1/2} finite, so the commutator decays like ℓ^{2·1/2}
        self.assertAlmostEqual(_fit_slope(scales, defects), 1.0, delta=0.2)


class EmbeddingHelpersTests(SimpleTestCase):
    def test_injectivity_margin(self):
        u = product_embedding(2, 32, 0.9)
        self.assertGreater(injectivity_margin(u, pairs=2000, seed=1), 0.0)
        flat = PeriodicField.constant(np.zeros(4), 2, 16, k=4)
        self.assertEqual(injectivity_margin(flat, pairs=100, seed=1), 0.0)

    def test_dump_and_load(self):
        u = product_embedding(2, 16, 0.5)
        with tempfile.TemporaryDirectory() as tmp:
            path = dump_field(u, Path(tmp) / "u.bin")
            raw = path.read_bytes()
            self.assertEqual(np.frombuffer(raw[:24], dtype="<i8").tolist(), [2, 4, 16])
            back = load_field(path)
            np.testing.assert_array_equal(back.values, u.values)
            self.assertEqual(back.period, u.period)

    def test_csv_export(self):
        f = PeriodicField.from_function(lambda x, y: x + y, 2, 8)
        with tempfile.TemporaryDirectory() as tmp:
            lines = field_to_csv(f, Path(tmp) / "f.csv").read_text().splitlines()
        self.assertEqual(lines[0], "i0,i1,x0,x1,v0")
        self.assertEqual(len(lines), 65)

    def test_mesh_export(self):
        u = product_embedding(2, 8, 0.5)
        with tempfile.TemporaryDirectory() as tmp:
            ply = write_ply(u, Path(tmp) / "u.ply").read_text().splitlines()
            obj = write_obj(u, Path(tmp) / "u.obj").read_text().splitlines()
        self.assertIn("element vertex 64", ply)
        self.assertIn("property double x3", ply)
        self.assertIn("element face 64", ply)
        self.assertEqual(ply[-1].split()[0], "4")
        self.assertEqual(sum(line.startswith("v ") for line in obj), 64)
        self.assertEqual(sum(line.startswith("f ") for line in obj), 64)
        self.assertEqual(obj[-1].split()[0], "f")

    def test_obj_needs_a_surface(self):
        u = product_embedding(3, 8, 0.5)
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaisesMessage(ValidationError, "OBJ projection needs a surface"):
                write_obj(u, Path(tmp) / "u.obj")
