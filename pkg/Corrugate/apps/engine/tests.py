import json
import math
import tempfile
from fractions import Fraction
from io import StringIO
from pathlib import Path

import numpy as np
from django.conf import settings as django_settings
from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings
from django.urls import reverse
from hypothesis import given, settings, strategies as st

from apps.grid.fields import MetricField, coordinate_grid
from apps.stage.pipeline import StageParams

from .driver import RunConfig, ladder_exponent, run_global, stage_top_frequency
from .exponents import (
    default_theta0,
    largest_admissible_alpha,
    ledger_check,
    ledger_sweep,
    rho_update,
    schedule,
    steps_exponent,
    theta_threshold,
)
from .forms import RunConfigForm
from .models import CalibrationConstant, RunRecord
from .state import SHORTNESS_FRACTION, initial_short
from .verification import SUITES, run_suite


class ThresholdTests(SimpleTestCase):
    def test_threshold_exponents(self):
        self.assertEqual(theta_threshold(2), Fraction(1, 3))
        self.assertEqual(theta_threshold(3), Fraction(1, 5))
        self.assertEqual(theta_threshold(4), Fraction(1, 6))
        with self.assertRaisesMessage(ValidationError, "dimension must be at least 2"):
            theta_threshold(1)

    def test_steps_exponent(self):
        self.assertEqual([steps_exponent(n) for n in (2, 3, 4, 5)], [1, 2, Fraction(5, 2), 3])


class LedgerTests(SimpleTestCase):
    def test_c_star_for_three_torus(self):
        case = ledger_check(3, 0.15, 0.1, 0.5)
        self.assertAlmostEqual(case.c_star, (1.0 - 0.15 * 5.0) / (4.0 * 0.15 * 0.85), places=12)
        self.assertEqual(case.N, 2.0)
        self.assertTrue(case.admissible)

    def test_vanishing_alpha_passes(self):
        case = ledger_check(2, 0.2, 1e-6, 0.5)
        self.assertTrue(case.passed)
        self.assertAlmostEqual(case.b, 1.0, places=5)
        self.assertGreater(case.kappa, 1.0)

    def test_beyond_threshold(self):
        with self.assertRaisesMessage(ValidationError, "beyond threshold exponent"):
            ledger_check(2, 1.0 / 3.0, 0.1, 0.5)
        with self.assertRaisesMessage(ValidationError, "exponents must lie in (0, 1)"):
            ledger_check(3, 0.1, 0.0, 0.5)

    def test_lattice_sweep_passes(self):
        for n in (2, 3, 4, 5):
            cases = ledger_sweep(n, points=20)
            self.assertEqual(len(cases), 8000)
            self.assertTrue(all(case.passed for case in cases), f"n = {n}")

    @settings(max_examples=200, deadline=None)
    @given(
        n=st.integers(min_value=2, max_value=6),
        t=st.floats(min_value=0.01, max_value=0.99),
        beta=st.floats(min_value=0.01, max_value=0.99),
        a=st.floats(min_value=0.01, max_value=0.99),
    )
    def test_admissible_tuples_pass(self, n, t, beta, a):
        theta = t * float(theta_threshold(n))
        N = float(steps_exponent(n))
        c_star = (1.0 - theta * (1.0 + 2.0 * N)) / (4.0 * theta * (1.0 - theta))
        case = ledger_check(n, theta, a * min(c_star * beta, 0.99), beta)
        self.assertTrue(case.passed)
        self.assertGreater(case.kappa, 1.0)
        self.assertGreater(case.b, 1.0)


class ScheduleTests(SimpleTestCase):
    def test_reference_schedule(self):
        sched = schedule(2, 0.1, 0.3, 0.05, 0.5, 1e3)
        self.assertEqual(len(sched.levels), 3)
        self.assertAlmostEqual(sched.levels[0].b, 1.3, places=12)
        self.assertGreater(sched.theta_final, 0.1)
        self.assertTrue(sched.ordering_ok)
        self.assertAlmostEqual(sched.delta(1), 1e3**-0.5, places=14)
        for q in range(1, len(sched.deltas)):
            self.assertAlmostEqual(sched.log_lambda(q + 1), 1.3 * sched.log_lambda(q), places=9)

    def test_vanishing_alpha_keeps_levels(self):
        sched = schedule(2, 0.1, 0.3, 0.0, 0.5, 1e3)
        self.assertEqual({level.theta for level in sched.levels}, {0.3})
        self.assertEqual({level.b for level in sched.levels}, {1.0})

    def test_shrink_alpha(self):
        with self.assertRaisesMessage(ValidationError, "shrink α₀"):
            schedule(2, 0.29, 0.3, 0.05, 0.5, 1e3)

    def test_largest_admissible_alpha(self):
        alpha = largest_admissible_alpha(2, 0.32, 0.33)
        self.assertGreater(alpha, 0.0)
        schedule(2, 0.32, 0.33, 0.9 * alpha, 0.5, 1e3)
        with self.assertRaisesMessage(ValidationError, "shrink α₀"):
            schedule(2, 0.32, 0.33, 1.1 * alpha, 0.5, 1e3)

    def test_default_theta0(self):
        self.assertAlmostEqual(default_theta0(2, 0.1, 0.05), 0.3)
        self.assertAlmostEqual(default_theta0(3, 0.1, 0.05), 0.15)
        self.assertAlmostEqual(default_theta0(2, 0.32, 0.0), 0.5 * (0.32 + 1.0 / 3.0))
        schedule(2, 0.1, default_theta0(2, 0.1, 0.05), 0.05, 0.5, 1e3)


class RhoUpdateTests(SimpleTestCase):
    def test_cutoff_limits(self):
        self.assertAlmostEqual(float(rho_update(0.3, 1.0, 0.01)), 0.1, places=14)
        self.assertAlmostEqual(float(rho_update(0.3, 0.0, 0.01)), 0.3, places=14)
        self.assertAlmostEqual(float(rho_update(0.1, 1.0 / math.sqrt(2.0), 0.01)), 0.1, places=14)


class InitialShortTests(SimpleTestCase):
    def test_flat_seed(self):
        state = initial_short(MetricField.identity(2, 32), 2.0, 0.05, 0.5, 0.3, epsilon=0.9)
        np.testing.assert_allclose(state.rho.values, math.sqrt(0.19), rtol=1e-14)
        self.assertEqual(np.abs(state.h.values).max(), 0.0)
        self.assertLessEqual(state.identity_residual(), 1e-12)
        self.assertAlmostEqual(state.defect(), 0.19, places=12)

    def test_default_epsilon_follows_A0(self):
        state = initial_short(MetricField.identity(2, 16), 1e3, 0.05, 0.5, 0.3)
        self.assertAlmostEqual(float(state.rho.values.max()), SHORTNESS_FRACTION * 1e3**-0.5, places=12)
        self.assertAlmostEqual(state.margins()["rho"], 1.0 - SHORTNESS_FRACTION, places=12)

    def test_vanishing_margin_is_rejected(self):
        with self.assertRaisesMessage(ValidationError, "shortness margin below ρ_min"):
            initial_short(MetricField.identity(2, 16), 2.0, 0.05, 0.5, 0.3, epsilon=1.0 - 1e-10)

    def test_bound_violation_is_named(self):
        with self.assertRaisesMessage(ValidationError, "adapted short bound violated: rho"):
            initial_short(MetricField.identity(2, 16), 1e3, 0.05, 0.5, 0.3, epsilon=0.5)

    def test_near_flat_metric(self):
        x1, x2 = coordinate_grid(2, 32)
        scale = 1.0 + 0.05 * np.sin(x1) * np.sin(x2)
        g = MetricField.from_matrices(scale[..., None, None] * np.eye(2))
        state = initial_short(g, 10.0, 0.05, 0.5, 0.3, frequency=64)
        self.assertLessEqual(state.identity_residual(), 1e-8)
        for name, margin in state.margins().items():
            self.assertGreaterEqual(margin, 0.1, name)


@override_settings(CORRUGATE={**django_settings.CORRUGATE, "CALIBRATION_MANIFEST": "/nonexistent/calibration.json"})
class RunGlobalTests(SimpleTestCase):
    config = {
        "n": 2,
        "resolution": 64,
        "theta": 0.1,
        "theta0": 0.3,
        "alpha0": 0.05,
        "beta0": 0.5,
        "A0": 1e3,
        "iterations": 3,
    }

    def test_first_iterate_and_cap(self):
        with tempfile.TemporaryDirectory() as tmp:
            artifacts = run_global(dict(self.config, output_dir=tmp))
            self.assertEqual(artifacts.status, "completed")
            idle, active, capped = artifacts.iterates
            self.assertFalse(idle.active)
            self.assertEqual(idle.rho, float(artifacts.initial.rho.values.max()))
            self.assertTrue(active.active)
            self.assertEqual(active.frequencies, [8])
            self.assertAlmostEqual(active.rho, math.sqrt(artifacts.schedule.delta(3)), places=14)
            self.assertLessEqual(active.identity_residual, 1e-6)
            self.assertGreater(active.injectivity, 0.0)
            self.assertTrue(capped.capped)
            self.assertFalse(capped.active)
            self.assertTrue(artifacts.cap_reached)
            for name in ("manifest", "iterates", "schedule", "stages", "profile", "final"):
                self.assertTrue(Path(artifacts.paths[name]).exists(), name)
            self.assertEqual(artifacts.manifest["status"], "completed")

    def test_default_config_activates(self):
        artifacts = run_global({"resolution": 64}, write=False)
        self.assertAlmostEqual(artifacts.config.theta0, 0.3)
        self.assertTrue(any(it.active for it in artifacts.iterates))

    def test_upcoming_stage_is_capped_before_it_runs(self):
        artifacts = run_global(dict(self.config, frequency_scale=1e-8), write=False)
        idle, capped = artifacts.iterates
        self.assertFalse(idle.active)
        self.assertTrue(capped.capped)
        self.assertEqual(capped.frequencies, [])
        self.assertTrue(artifacts.cap_reached)
        np.testing.assert_array_equal(artifacts.final.u.values, artifacts.initial.u.values)

    def test_top_frequency_must_be_resolved(self):
        with self.assertRaisesMessage(ValidationError, "top frequency outside the resolved range"):
            run_global(dict(self.config, top_frequency=320), write=False)
        artifacts = run_global(dict(self.config, top_frequency=4, iterations=2), write=False)
        self.assertEqual(artifacts.iterates[1].frequencies, [4])

    def test_different_A0_gives_different_embeddings(self):
        one = run_global(dict(self.config, iterations=2), write=False)
        two = run_global(dict(self.config, iterations=2, A0=100.0), write=False)
        self.assertEqual([it.active for it in one.iterates], [False, True])
        self.assertEqual([it.active for it in two.iterates], [False, True])
        self.assertGreater(np.abs(one.final.u.values - two.final.u.values).max(), 1e-3)

    def test_threshold_is_enforced(self):
        with self.assertRaisesMessage(ValidationError, "beyond threshold exponent"):
            run_global(dict(self.config, theta=0.35, theta0=None), write=False)

    def test_unknown_keys(self):
        with self.assertRaisesMessage(ValidationError, "unknown run configuration keys: colour"):
            RunConfig.from_dict({"colour": "blue"})

    def test_ladder_exponents(self):
        self.assertEqual(ladder_exponent(2, 1.2), 1.2)
        self.assertAlmostEqual(ladder_exponent(3, 1.2), 1.4)
        self.assertAlmostEqual(ladder_exponent(4, 1.2), 1.5)
        params = StageParams(0.04, 64.0, 1.2, n=4)
        self.assertEqual(max(params.frequencies()), round(64.0 ** ladder_exponent(4, 1.2)))
        self.assertAlmostEqual(stage_top_frequency(params), 512 * math.sqrt(7.0))


class RunConfigFormTests(SimpleTestCase):
    data = {"n": 2, "resolution": 32, "theta": 0.1, "alpha0": 0.05, "beta0": 0.5, "A0": 1000, "iterations": 2}

    def test_valid_config(self):
        form = RunConfigForm(data=dict(self.data, accuracy=6))
        self.assertTrue(form.is_valid(), form.errors)
        config = form.to_config()
        self.assertEqual(config.accuracy, 6)
        self.assertAlmostEqual(config.theta0, 0.3)
        self.assertIsNone(config.epsilon)

    def test_threshold(self):
        form = RunConfigForm(data=dict(self.data, theta=0.34))
        self.assertFalse(form.is_valid())
        self.assertIn("beyond threshold exponent 1/3", form.errors["theta"][0])

    def test_field_checks(self):
        form = RunConfigForm(data=dict(self.data, resolution=33, beta0=1.5, top_frequency=0.5))
        self.assertFalse(form.is_valid())
        self.assertEqual(form.errors["resolution"], ["Resolution must be even."])
        self.assertEqual(form.errors["beta0"], ["β₀ must lie in (0, 1)."])
        self.assertEqual(form.errors["top_frequency"], ["Top frequency must exceed 1."])

    def test_top_frequency_is_resolved(self):
        form = RunConfigForm(data=dict(self.data, top_frequency=5))
        self.assertFalse(form.is_valid())
        self.assertEqual(form.errors["top_frequency"], ["Top frequency must not exceed resolution/8."])
        self.assertTrue(RunConfigForm(data=dict(self.data, top_frequency=4)).is_valid())

    def test_unknown_keys(self):
        form = RunConfigForm(data=dict(self.data, colour="blue"))
        self.assertFalse(form.is_valid())
        self.assertEqual(form.non_field_errors(), ["unknown run configuration keys: colour"])


@override_settings(CORRUGATE={**django_settings.CORRUGATE, "CALIBRATION_MANIFEST": "/nonexistent/calibration.json"})
class RunRecordTests(TestCase):
    config = dict(RunGlobalTests.config, iterations=1)

    def test_finished_run_is_stored_and_served(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = RunConfig.from_dict(dict(self.config, output_dir=tmp))
            record = RunRecord.start(config)
            record.finish(run_global(config))

            record.refresh_from_db()
            self.assertEqual(record.status, "completed")
            self.assertEqual(record.iterates.count(), 1)
            self.assertFalse(record.iterates.get().active)
            self.assertEqual(record.manifest["status"], "completed")
            self.assertAlmostEqual(record.final_defect, 1.0 - (1.0 - (0.85 * 1e3**-0.5) ** 2))

            listing = self.client.get(reverse("run_list")).json()
            self.assertEqual([run["id"] for run in listing["runs"]], [record.pk])
            detail = self.client.get(reverse("run_detail", args=[record.pk])).json()
            self.assertEqual(detail["iterates"][0]["q"], 0)
            self.assertEqual(detail["config"]["resolution"], 64)

    def test_missing_run(self):
        response = self.client.get(reverse("run_detail", args=[999]))
        self.assertEqual(response.status_code, 404)
        self.assertEqual(response.json(), {"error": "Run not found"})

    def test_calibration_constants_are_upserted(self):
        CalibrationConstant.store({"sigma1": 0.2}, {"sigma1": "bisection"})
        CalibrationConstant.store({"sigma1": 0.25, "step_c0": None})
        data = self.client.get(reverse("calibration_list")).json()["constants"]
        self.assertEqual([(c["name"], c["value"]) for c in data], [("sigma1", 0.25), ("step_c0", None)])


@override_settings(CORRUGATE={**django_settings.CORRUGATE, "CALIBRATION_MANIFEST": "/nonexistent/calibration.json"})
class CommandTests(TestCase):
    def test_ledger_sweep_writes_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "ledger.csv"
            out = StringIO()
            call_command("ledger", "--sweep", "--n", "2", "--points", "4", "--csv", str(path), stdout=out)
            lines = path.read_text().splitlines()
        self.assertIn("all 64 cases pass", out.getvalue())
        self.assertEqual(len(lines), 65)
        self.assertTrue(lines[0].startswith("n,N,theta,alpha,beta,b,kappa,c_star"))

    def test_verify_ledger(self):
        out = StringIO()
        call_command("verify", "ledger", stdout=out)
        self.assertIn("All 5 ledger checks passed", out.getvalue())

    def test_run_dry_run_and_invalid_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            good = Path(tmp) / "good.json"
            good.write_text(json.dumps(RunRecordTests.config))
            out = StringIO()
            call_command("run", "--config", str(good), "--dry-run", stdout=out)
            self.assertIn("DRY RUN MODE", out.getvalue())
            self.assertEqual(RunRecord.objects.count(), 0)

            bad = Path(tmp) / "bad.json"
            bad.write_text(json.dumps(dict(RunRecordTests.config, theta=0.5)))
            with self.assertRaisesMessage(CommandError, "Invalid run configuration."):
                call_command("run", "--config", str(bad), stdout=StringIO())

    def test_run_and_export(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = Path(tmp) / "run.json"
            config.write_text(json.dumps(dict(RunRecordTests.config, output_dir=str(Path(tmp) / "out"))))
            call_command("run", "--config", str(config), stdout=StringIO())
            record = RunRecord.objects.get()
            self.assertEqual(record.status, "completed")

            call_command("export", "--mesh", "--run", str(record.pk), stdout=StringIO())
            self.assertTrue((Path(record.output_dir) / "final.ply").exists())
            self.assertTrue((Path(record.output_dir) / "final.obj").exists())


@override_settings(CORRUGATE={**django_settings.CORRUGATE, "CALIBRATION_MANIFEST": "/nonexistent/calibration.json"})
class GlobalSuiteTests(SimpleTestCase):
    def test_global_checks_are_reported(self):
        checks = {check.name: check for check in run_suite("global")}
        self.assertEqual(
            list(checks),
            [
                "active iterates",
                "defect decreasing",
                "C̄₀ spread",
                "Cauchy ratio at 0.25",
                "Cauchy ratio at 0.4",
                "injectivity",
                "A₀ separation",
            ],
        )
        self.assertGreaterEqual(checks["active iterates"].value, 1)
        self.assertTrue(checks["injectivity"].passed)
        self.assertTrue(checks["A₀ separation"].passed)
        self.assertIn("global", SUITES)
