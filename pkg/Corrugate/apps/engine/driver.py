import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.utils import timezone

from apps.corrugation.profile import default_profile
from apps.decompose.basis import torus_basis
from apps.grid.fields import MetricField, PeriodicField
from apps.grid.io import dump_field
from apps.grid.operators import hessian, injectivity_margin, jacobian, jet_norms
from apps.stage.pipeline import StageParams, default_branch, run_stage
from apps.step.corrugate import FREQUENCY_SLACK
from utils.artifacts import ensure_dir, read_json, write_csv, write_json
from utils.config import get_setting

from .exponents import default_theta0, ledger_check, rho_update, schedule
from .state import AdaptedShortState, initial_short

logger = logging.getLogger(__name__)

ITERATE_COLUMNS = [
    "q", "active", "capped", "delta", "lam", "frequencies", "rho", "defect", "target_defect",
    "step_c0", "step_c1", "step_c2", "c_bar0", "c_bar1", "injectivity", "identity_residual",
    "stage_passed",
]


@dataclass
class RunConfig:
    n: int = 2
    resolution: int = 256
    theta: float = 0.1
    theta0: float = None
    alpha0: float = 0.05
    beta0: float = 0.5
    A0: float = 1e3
    iterations: int = 3
    output_dir: str = None
    epsilon: float = None
    frequency_scale: float = None
    top_frequency: float = None
    seed: int = None
    accuracy: int = None
    cauchy_exponents: tuple = (0.25, 0.40)
    dump: bool = False

    def __post_init__(self):
        if self.theta0 is None:
            self.theta0 = default_theta0(self.n, self.theta, self.alpha0)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(
                f"unknown run configuration keys: {', '.join(sorted(unknown))}", code="config_keys"
            )
        return cls(**{k: v for k, v in data.items() if v is not None})

    def as_dict(self):
        data = asdict(self)
        data["cauchy_exponents"] = list(self.cauchy_exponents)
        return data


@dataclass
class IterateResult:
    q: int
    active: bool
    rho: float
    defect: float
    target_defect: float
    identity_residual: float
    injectivity: float
    capped: bool = False
    delta: float = None
    lam: float = None
    frequencies: list = field(default_factory=list)
    step_norms: tuple = (0.0, 0.0, 0.0)
    c_bar: tuple = (None, None)
    cauchy: dict = field(default_factory=dict)
    stage: object = None

    def as_row(self):
        row = {
            "q": self.q,
            "active": self.active,
            "capped": self.capped,
            "delta": self.delta,
            "lam": self.lam,
            "frequencies": " ".join(str(mu) for mu in self.frequencies),
            "rho": self.rho,
            "defect": self.defect,
            "target_defect": self.target_defect,
            "step_c0": self.step_norms[0],
            "step_c1": self.step_norms[1],
            "step_c2": self.step_norms[2],
            "c_bar0": self.c_bar[0],
            "c_bar1": self.c_bar[1],
            "injectivity": self.injectivity,
            "identity_residual": self.identity_residual,
            "stage_passed": None if self.stage is None else self.stage.passed,
        }
        for exponent, (value, ratio) in self.cauchy.items():
            row[f"cauchy_{exponent}"] = value
            row[f"cauchy_ratio_{exponent}"] = ratio
        return row


@dataclass
class RunArtifacts:
    config: RunConfig
    schedule: object
    ledger: object
    initial: AdaptedShortState
    iterates: list
    final: AdaptedShortState
    frequency_scale_log: float = None
    cap_reached: bool = False
    error: str = None
    manifest: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    @property
    def status(self):
        return "failed" if self.error else "completed"

    @property
    def defects(self):
        return [self.initial.defect()] + [it.defect for it in self.iterates if it.active]

    def decreasing(self):
        d = self.defects
        return all(b < a for a, b in zip(d, d[1:]))


def ladder_exponent(n, kappa, branch=None):
    """p with the last step frequency of a stage equal to λ^p."""
    branch = branch or default_branch(n)
    if branch == "conformal":
        return kappa
    if branch == "nash":
        return 1.0 + 2.0 * (kappa - 1.0)
    if branch == "odd":
        return 1.0 + (n + 1) // 2 * (kappa - 1.0)
    return 0.5 * (kappa + 1.0) + (n // 2) * (kappa - 1.0)


def _spread(n, branch):
    """Largest |∇Φ| of a stage's phases."""
    if branch == "conformal":
        return 1.0
    return float(np.linalg.norm(torus_basis(n).lattice, axis=1).max())


def _cauchy(step_c1, step_c2, exponent):
    if step_c1 == 0.0 or step_c2 == 0.0:
        return 0.0
    return step_c1 ** (1.0 - exponent) * step_c2**exponent


def stage_top_frequency(params):
    """Largest |∇(μΦ)| a stage will put on the grid."""
    return max(params.frequencies()) * _spread(params.n, params.branch)


def _fit_log_scale(target, n, kappa, branch, log_lambda):
    """log of the scale that puts the first active stage's top frequency at or just below target."""
    base = math.floor(target / _spread(n, branch) + FREQUENCY_SLACK)
    if base < 2:
        raise ValidationError(
            "grid too coarse for a resolved stage", code="top_frequency", params={"target": target}
        )
    return math.log(base) / ladder_exponent(n, kappa, branch) - log_lambda


def run_global(config, write=True):
    """Iterate stages from the initial short map on the flat torus Tⁿ → R²ⁿ.

    A stage runs only when every frequency it would place stays within R/RESOLUTION_FACTOR;
    the first stage that would not is recorded as capped and ends the run.
    """
    if isinstance(config, dict):
        config = RunConfig.from_dict(config)
    n, resolution = config.n, config.resolution
    factor = get_setting("RESOLUTION_FACTOR", 8)
    if config.top_frequency is not None and config.top_frequency * factor > resolution:
        raise ValidationError(
            "top frequency outside the resolved range",
            code="top_frequency",
            params={"top_frequency": config.top_frequency, "limit": resolution / factor},
        )
    started = timezone.now()

    sched = schedule(
        n, config.theta, config.theta0, config.alpha0, config.beta0, config.A0,
        iterations=config.iterations + 3,
    )
    level = sched.levels[0]
    case = ledger_check(n, level.theta, level.alpha, level.beta)
    if not case.passed or not case.admissible:
        raise ValidationError(
            "exponent ledger fails on the configured parameters", code="ledger", params=case.as_row()
        )

    g = MetricField.identity(n, resolution)
    calibrated = calibration_constants()
    state = initial_short(g, config.A0, level.alpha, level.beta, level.theta, epsilon=config.epsilon)
    initial = state
    alpha_stage = level.theta * level.alpha / (4.0 * level.b**2)
    branch = default_branch(n)
    log_scale = None if config.frequency_scale is None else math.log(config.frequency_scale)
    artifacts = RunArtifacts(config, sched, case, initial, [], state)

    logger.info(
        "run n=%d R=%d θ=%.3f: b=%.4f κ=%.4f θ_final=%.4f, δ₁=%.3e",
        n, resolution, config.theta, level.b, case.kappa, sched.theta_final, sched.delta(1),
    )
    previous_cauchy = {}
    try:
        for q in range(config.iterations):
            delta_next, delta_after = sched.delta(q + 1), sched.delta(q + 2)
            r = float(state.rho.values.max())
            if r**2 < 1.25 * delta_after:
                logger.info("iterate %d idle: ρ²=%.3e below 5/4 δ_{q+2}", q, r**2)
                artifacts.iterates.append(_idle(q, state, delta_after, seed=config.seed))
                continue

            kappa = case.kappa
            if log_scale is None:
                target = config.top_frequency or resolution / factor
                log_scale = _fit_log_scale(target, n, kappa, branch, sched.log_lambda(q + 2))
                artifacts.frequency_scale_log = log_scale
            lam = math.exp(log_scale + sched.log_lambda(q + 2))
            params = StageParams(
                delta=min(4.0 * delta_next, 0.99), lam=lam, kappa=kappa, n=n,
                alpha=alpha_stage, accuracy=config.accuracy,
                delta_star=calibrated.get("delta_star"), lambda_star=calibrated.get("lambda_star"),
            )
            top = stage_top_frequency(params)
            if top * factor > resolution:
                logger.warning(
                    "iteration cap at q=%d: stage frequency %.0f needs R ≥ %.0f", q, top, top * factor
                )
                artifacts.cap_reached = True
                artifacts.iterates.append(_idle(q, state, delta_after, capped=True, seed=config.seed))
                break
            state, result = _active_iterate(q, state, params, delta_next, delta_after, branch, config.seed)
            _record_cauchy(result, previous_cauchy, config.cauchy_exponents)
            artifacts.iterates.append(result)
            if config.dump and write:
                dump_field(state.u, Path(_output_dir(config)) / f"u_{q + 1}.bin")
    except ValidationError as exc:
        artifacts.error = "; ".join(exc.messages)
        logger.error("run halted at iterate %d: %s", len(artifacts.iterates), artifacts.error)
        artifacts.final = state
        _finish(artifacts, started, write)
        raise
    artifacts.final = state
    _finish(artifacts, started, write)
    return artifacts


def _idle(q, state, delta_after, capped=False, seed=None):
    return IterateResult(
        q=q,
        active=False,
        capped=capped,
        rho=float(state.rho.values.max()),
        defect=state.defect(),
        target_defect=delta_after,
        identity_residual=state.identity_residual(),
        injectivity=injectivity_margin(state.u, seed=seed),
    )


def _active_iterate(q, state, params, delta_next, delta_after, branch, seed=None):
    n, resolution = state.n, state.u.resolution
    r = float(state.rho.values.max())
    shrink = r**2 / (r**2 - delta_after)
    rho_stage = PeriodicField.constant(math.sqrt(r**2 - delta_after), n, resolution)
    h_stage = state.h.scaled(shrink)
    v, error, report = run_stage(state.u, rho_stage, state.g, h_stage, params)

    rho_next = float(rho_update(r, 1.0, delta_after))
    nxt = AdaptedShortState(
        u=v,
        rho=PeriodicField.constant(rho_next, n, resolution),
        h=error.scaled(-1.0 / delta_after),
        g=state.g,
        theta=state.theta,
        beta=state.beta,
        alpha=state.alpha,
        A=state.A,
        top_frequency=max(report.frequencies) * _spread(n, branch),
    )
    residual = nxt.identity_residual()
    if residual > 1e-6:
        raise ValidationError(
            "adapted short identity lost after a stage", code="adapted_identity",
            params={"q": q, "residual": residual},
        )
    displacement = PeriodicField(
        v.values - state.u.values, jacobian(v) - jacobian(state.u), hessian(v) - hessian(state.u), v.period
    )
    d0, d1, d2 = jet_norms(displacement)
    step_norms = (d0, d0 + d1, d0 + d1 + d2)
    root = math.sqrt(delta_next)
    result = IterateResult(
        q=q,
        active=True,
        rho=rho_next,
        defect=nxt.defect(),
        target_defect=delta_after,
        identity_residual=residual,
        injectivity=injectivity_margin(v, seed=seed),
        delta=params.delta,
        lam=params.lam,
        frequencies=report.frequencies,
        step_norms=step_norms,
        c_bar=(d0 * params.lam / root, step_norms[1] / root),
        stage=report,
    )
    logger.info(
        "iterate %d: λ=%.4g, μ=%s, defect %.4e (target %.4e), ‖Δu‖₁=%.3e, injectivity %.3g",
        q, params.lam, report.frequencies, result.defect, delta_after, step_norms[1], result.injectivity,
    )
    return nxt, result


def _record_cauchy(result, previous, exponents):
    for exponent in exponents:
        value = _cauchy(result.step_norms[1], result.step_norms[2], exponent)
        before = previous.get(exponent)
        ratio = value / before if before else None
        result.cauchy[exponent] = (value, ratio)
        previous[exponent] = value


def _output_dir(config):
    return config.output_dir or get_setting("OUTPUT_DIR", "runs")


def calibration_constants():
    path = Path(get_setting("CALIBRATION_MANIFEST", "calibration.json"))
    if not path.exists():
        return {}
    return read_json(path).get("constants", {})


def _finish(artifacts, started, write):
    config = artifacts.config
    stages = [it.stage for it in artifacts.iterates if it.stage is not None]
    measured = {}
    for report in stages:
        for name, value in report.constants.items():
            measured[name] = max(measured.get(name, 0.0), value)
    artifacts.manifest = {
        "status": artifacts.status,
        "error": artifacts.error,
        "started": started.isoformat(),
        "finished": timezone.now().isoformat(),
        "config": config.as_dict(),
        "ledger": artifacts.ledger.as_row(),
        "theta_final": artifacts.schedule.theta_final,
        "ordering_ok": artifacts.schedule.ordering_ok,
        "frequency_scale_log": artifacts.frequency_scale_log,
        "cap_reached": artifacts.cap_reached,
        "s_max": get_setting("S_MAX", 0.6),
        "calibration": calibration_constants(),
        "measured_constants": measured,
        "initial": artifacts.initial.as_row(),
        "final_defect": artifacts.final.defect(),
        "defects": artifacts.defects,
    }
    if not write:
        return
    out = ensure_dir(_output_dir(config))
    iterate_rows = [it.as_row() for it in artifacts.iterates]
    cauchy_columns = [
        f"{prefix}_{exponent}" for exponent in config.cauchy_exponents for prefix in ("cauchy", "cauchy_ratio")
    ]
    stage_rows = [report.as_row() for report in stages]
    stage_columns = list(stage_rows[0]) if stage_rows else []
    artifacts.paths = {
        "manifest": write_json(out / "manifest.json", artifacts.manifest),
        "iterates": write_csv(out / "iterates.csv", ITERATE_COLUMNS + cauchy_columns, iterate_rows),
        "schedule": write_csv(out / "schedule.csv", ["q", "delta", "log_lambda", "ordering_ok"], artifacts.schedule.as_rows()),
        "stages": write_csv(out / "stages.csv", stage_columns, stage_rows),
        "profile": write_csv(out / "profile.csv", ["s", "alpha", "alpha_prime"], default_profile().table_rows()),
        "final": dump_field(artifacts.final.u, out / "final.bin"),
    }
