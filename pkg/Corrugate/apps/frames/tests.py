import numpy as np
import scipy.linalg
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from apps.grid.fields import PeriodicField, coordinate_grid
from apps.grid.operators import jet_norms, product_embedding

from .normals import frame_gradient, normal_frame, seam_generator


def flat_inclusion(resolution=16):
    """(x₁, x₂, 0, 0) with its exact jacobian attached."""
    x1, x2 = coordinate_grid(2, resolution)
    values = np.stack([x1, x2, np.zeros_like(x1), np.zeros_like(x1)], axis=-1)
    jac = np.zeros(values.shape + (2,))
    jac[..., 0, 0] = 1.0
    jac[..., 1, 1] = 1.0
    return PeriodicField(values, jacobian=jac)


def perturbed_torus(resolution, amplitude, seed=0, wavenumber=1):
    base = product_embedding(2, resolution, 0.9).values
    x1, x2 = coordinate_grid(2, resolution)
    rng = np.random.default_rng(seed)
    weights = rng.normal(size=4)
    bump = np.sin(wavenumber * x1 + 2.0 * x2) / wavenumber
    return PeriodicField(base + amplitude * bump[..., None] * weights)


class NormalFrameTests(SimpleTestCase):
    def test_flat_inclusion(self):
        frame = normal_frame(flat_inclusion())
        expected = np.zeros((4, 2))
        expected[2, 0] = expected[3, 1] = 1.0
        np.testing.assert_allclose(frame.columns, np.broadcast_to(expected, frame.columns.shape), atol=1e-14)
        self.assertEqual(len(frame.seam_angles), 2)
        self.assertLessEqual(max(frame.seam_angles), 1e-12)

    def test_clifford_torus_projector(self):
        u = product_embedding(2, 32, 0.9)
        frame = normal_frame(u)
        x1, x2 = coordinate_grid(2, 32)
        zero = np.zeros_like(x1)
        n1 = np.stack([np.cos(x1), np.sin(x1), zero, zero], axis=-1)
        n2 = np.stack([zero, zero, np.cos(x2), np.sin(x2)], axis=-1)
        exact = np.einsum("...a,...b->...ab", n1, n1) + np.einsum("...a,...b->...ab", n2, n2)
        self.assertLessEqual(np.abs(frame.projector() - exact).max(), 1e-8)
        self.assertLessEqual(frame.orthonormality_residual, 1e-12)
        self.assertLessEqual(frame.tangency_residual, 1e-10)

    def test_continuity_defect_shrinks_with_spacing(self):
        coarse = normal_frame(product_embedding(2, 32, 0.9)).continuity_defect
        fine = normal_frame(product_embedding(2, 64, 0.9)).continuity_defect
        self.assertLess(fine, 0.6 * coarse)
        self.assertLess(coarse * 32, 10.0)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=1000), amplitude=st.floats(min_value=0.0, max_value=0.05))
    def test_residuals_on_perturbed_tori(self, seed, amplitude):
        frame = normal_frame(perturbed_torus(32, amplitude, seed))
        self.assertLessEqual(frame.orthonormality_residual, 1e-10)
        self.assertLessEqual(frame.tangency_residual, 1e-10)

    def test_frame_growth_follows_second_derivatives(self):
        for wavenumber in (1, 2, 4, 8):
            u = perturbed_torus(64, 0.05, seed=1, wavenumber=wavenumber)
            frame = normal_frame(u)
            frame_first = float(np.sqrt(np.sum(frame_gradient(frame) ** 2, axis=(-3, -2, -1))).max())
            second = jet_norms(u)[2]
            self.assertLessEqual(frame_first, 4.0 * (1.0 + second))

    def test_pairs_and_export(self):
        frame = normal_frame(product_embedding(2, 16, 0.9))
        pairs = frame.pairs()
        self.assertEqual(len(pairs), 1)
        zeta, eta = pairs[0]
        np.testing.assert_allclose(np.sum(zeta * eta, axis=-1), 0.0, atol=1e-12)
        self.assertEqual(frame.as_field().k, 8)

    def test_immersion_failure_names_node(self):
        u = flat_inclusion()
        jac = u.jacobian.copy()
        jac[4, 9] = 0.0
        with self.assertRaisesMessage(ValidationError, "not an immersion at node (4, 9)"):
            normal_frame(PeriodicField(u.values, jacobian=jac))


class SeamGeneratorTests(SimpleTestCase):
    def test_small_rotation_is_unwound(self):
        angle = 0.3
        rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        generator, measured = seam_generator(rotation)
        self.assertAlmostEqual(measured, angle, places=12)
        np.testing.assert_allclose(scipy.linalg.expm(generator), rotation, atol=1e-12)

    def test_reflection_is_an_obstruction(self):
        with self.assertRaisesMessage(ValidationError, "frame holonomy obstruction"):
            seam_generator(np.diag([1.0, -1.0]))

    def test_large_rotation_is_an_obstruction(self):
        rotation = np.array([[np.cos(2.0), -np.sin(2.0)], [np.sin(2.0), np.cos(2.0)]])
        with self.assertRaisesMessage(ValidationError, "frame holonomy obstruction"):
            seam_generator(rotation)
