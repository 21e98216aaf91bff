from typing import Any, Callable, Dict, List, Optional, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
import json
import logging
import time

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from ..app.config import settings
from ..app.errors import InvalidConfigError, InvalidSpecError
from .metrics import (
    TrialMetrics,
    aligned_angle_deg,
    sdp_trial_metrics,
    spectral_trial_metrics,
    success_rate,
    z_distances,
)
from .mixture_model import (
    MixtureSpec,
    derive_seed,
    fingerprint,
    make_bernoulli_spec,
    make_gaussian_spec,
    sample,
    separation,
)
from .preprocessing import CenteredData, build_A, center, reference_R
from .sdp_solver import SolverOptions, solve
from .spectral import peng_wei_split, reference_v1, sign_split, top_eigen
from .trial_runner import TrialRunner, TrialStatus
from .verification import (
    GROTHENDIECK_K,
    CheckResult,
    VerificationReport,
    bias_bound_check,
    bias_monte_carlo,
    brute_force_maxcut,
    curvature_check,
    davis_kahan_bound,
    deviation_envelope,
    gram_monte_carlo,
    grothendieck_check,
    high_snr_check,
    identity_checks,
    inf_to_one_exact,
    mixed_term_check,
    op_norm,
    random_feasible_Z,
    sandwich_check,
)

logger = logging.getLogger(__name__)


class RunMode(str, Enum):
    SWEEP = "sweep"
    ANGLES = "angles"
    VERIFY = "verify"


class Algorithm(str, Enum):
    SDP = "sdp"
    SPECTRAL_PW = "spectral_pw"
    SPECTRAL_SIGN = "spectral_sign"


class ExperimentPlan(BaseModel):
    mode: RunMode = RunMode.SWEEP
    n_grid: List[int] = Field(default_factory=lambda: [100, 200, 400])
    p_grid: List[int] = Field(default_factory=lambda: [500])
    w1: float = Field(default_factory=lambda: settings.w1, gt=0.0, lt=1.0)
    alpha: float = Field(default_factory=lambda: settings.alpha, ge=0.0, lt=1.0)
    eps: Optional[float] = None
    trials: int = Field(default_factory=lambda: settings.trials, ge=1)
    master_seed: int = Field(default_factory=lambda: settings.master_seed, ge=0)
    algorithms: List[Algorithm] = Field(
        default_factory=lambda: [Algorithm(algo) for algo in settings.algorithms_list]
    )
    output_path: Optional[Path] = None
    threads: int = Field(default_factory=lambda: settings.threads, ge=1)
    model: str = "bernoulli"
    sigma1: float = Field(default=1.0, ge=0.0)
    sigma2: float = Field(default=1.0, ge=0.0)
    sdp: SolverOptions = Field(default_factory=SolverOptions.from_settings)

    @field_validator("n_grid", "p_grid")
    @classmethod
    def grid_not_empty(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("grid must not be empty")
        if any(value < 1 for value in v):
            raise ValueError("grid values must be positive")
        return list(dict.fromkeys(v))

    @field_validator("algorithms")
    @classmethod
    def algorithms_not_empty(cls, v: List[Algorithm]) -> List[Algorithm]:
        if not v:
            raise ValueError("at least one algorithm is required")
        return list(dict.fromkeys(v))

    @field_validator("model")
    @classmethod
    def known_model(cls, v: str) -> str:
        if v not in ("bernoulli", "gaussian"):
            raise ValueError(f"unknown model {v!r}; expected bernoulli or gaussian")
        return v

    @model_validator(mode="after")
    def fill_eps(self) -> "ExperimentPlan":
        if self.eps is None:
            self.eps = settings.eps_ratio * self.alpha
        if any(n < 2 for n in self.n_grid):
            raise ValueError("every n must be at least 2")
        try:
            for n in self.n_grid:
                self.spec_for(n, min(self.p_grid))
        except InvalidSpecError as e:
            raise ValueError(str(e)) from e
        return self

    def spec_for(self, n: int, p: int) -> MixtureSpec:
        if self.model == "bernoulli":
            return make_bernoulli_spec(self.alpha, self.eps, p, n, self.w1)
        return make_gaussian_spec(self.alpha, self.eps, p, n, self.w1, self.sigma1, self.sigma2)

    def cells(self) -> List[tuple]:
        return [(n, p) for n in self.n_grid for p in self.p_grid]


@dataclass
class SweepRow:
    algorithm: str
    n: int
    p: int
    gamma: float
    np_gamma_sq: float
    trials: int
    mean_success: Optional[float]
    std_success: Optional[float]
    mean_theta_deg: Optional[float]
    mean_sin_theta: Optional[float]
    mean_z_l1: Optional[float]
    mean_z_frob: Optional[float]
    mean_z_op: Optional[float]
    failures: int
    wall_ms: float


SWEEP_HEADER = [
    "algorithm", "n", "p", "gamma", "np_gamma_sq", "trials", "mean_success", "std_success",
    "mean_theta_deg", "mean_sin_theta", "mean_z_l1", "mean_z_frob", "mean_z_op", "failures", "wall_ms",
]


@dataclass
class AngleRow:
    n: int
    p: int
    w1: float
    trials: int
    mean_theta_sdp: Optional[float]
    std_theta_sdp: Optional[float]
    mean_theta_1: Optional[float]
    std_theta_1: Optional[float]
    mean_phi: Optional[float]
    mean_sin_theta_sdp: Optional[float]
    mean_sin_theta_1: Optional[float]
    mean_z_l1: Optional[float]
    mean_z_frob: Optional[float]
    mean_z_op: Optional[float]
    reference_angle_deg: float
    failures: int
    wall_ms: float


@dataclass
class AlgorithmOutcome:
    metrics: Optional[TrialMetrics] = None
    error: Optional[str] = None
    elapsed_ms: float = 0.0


def _config_to_plan_fields(config: Dict[str, Any]) -> Dict[str, Any]:
    fields: Dict[str, Any] = {}
    sdp: Dict[str, Any] = {}
    for key, value in config.items():
        if key.startswith("sdp."):
            sdp[key[4:]] = value
        elif key == "n":
            fields["n_grid"] = [value]
        elif key == "p":
            fields["p_grid"] = [value]
        elif key == "seed":
            fields["master_seed"] = value
        elif key == "algorithms" and isinstance(value, str):
            fields["algorithms"] = [algo.strip() for algo in value.split(",") if algo.strip()]
        else:
            fields[key] = value
    if sdp:
        base = SolverOptions.from_settings().model_dump()
        base.update(sdp)
        fields["sdp"] = base
    return fields


def load_plan(
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentPlan:
    """Settings defaults < JSON config file < explicit overrides (None values are ignored)"""
    fields: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidConfigError(f"Cannot read config {path}: {e}") from e
        if not isinstance(config, dict):
            raise InvalidConfigError(f"Config {path} must contain a JSON object")
        fields.update(_config_to_plan_fields(config))

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key.startswith("sdp."):
            fields.setdefault("sdp", SolverOptions.from_settings().model_dump())
            fields["sdp"][key[4:]] = value
        else:
            fields[key] = value

    try:
        return ExperimentPlan(**fields)
    except ValidationError as e:
        raise InvalidConfigError(f"Invalid experiment plan: {e}") from e


def _timed(outcomes: Dict[Algorithm, AlgorithmOutcome], algorithm: Algorithm, fn: Callable[[], TrialMetrics]):
    start = time.perf_counter()
    try:
        outcomes[algorithm] = AlgorithmOutcome(metrics=fn())
    except Exception as e:
        logger.error(f"{algorithm.value} failed: {type(e).__name__}: {e}")
        outcomes[algorithm] = AlgorithmOutcome(error=f"{type(e).__name__}: {e}")
    outcomes[algorithm].elapsed_ms = (time.perf_counter() - start) * 1000.0


def run_trial(
    spec: MixtureSpec,
    seed: int,
    algorithms: Sequence[Algorithm],
    opts: SolverOptions,
    with_phi: bool = False,
) -> Dict[Algorithm, AlgorithmOutcome]:
    """One dataset shared by every requested algorithm"""
    dataset = sample(spec, seed)
    cd = center(dataset.X)
    outcomes: Dict[Algorithm, AlgorithmOutcome] = {}
    spectral_wanted = with_phi or any(a != Algorithm.SDP for a in algorithms)
    eigen = None
    if spectral_wanted:
        try:
            eigen = top_eigen(cd.gram)
        except Exception as e:
            logger.error(f"Leading eigenvector failed at n={spec.n}, p={spec.p}: {e}")

    for algorithm in algorithms:
        if algorithm == Algorithm.SDP:
            _timed(outcomes, algorithm, lambda: sdp_trial_metrics(
                dataset, solve(build_A(cd), opts), v1=eigen.vector if (with_phi and eigen is not None) else None,
            ))
        elif eigen is None:
            outcomes[algorithm] = AlgorithmOutcome(error="leading eigenvector unavailable")
        elif algorithm == Algorithm.SPECTRAL_PW:
            _timed(outcomes, algorithm, lambda: spectral_trial_metrics(
                dataset, eigen, peng_wei_split(eigen.vector, gram=cd.gram), algorithm.value,
            ))
        else:
            _timed(outcomes, algorithm, lambda: spectral_trial_metrics(
                dataset, eigen, sign_split(eigen.vector), algorithm.value,
            ))
    return outcomes


def _run_cells(
    plan: ExperimentPlan,
    algorithms: Sequence[Algorithm],
    with_phi: bool,
    runner: Optional[TrialRunner],
):
    runner = runner or TrialRunner(max_workers=plan.threads)
    tasks = []
    for n, p in plan.cells():
        spec = plan.spec_for(n, p)
        for trial in range(plan.trials):
            seed = derive_seed(plan.master_seed, n, p, trial)
            tasks.append((
                (n, p, trial),
                lambda spec=spec, seed=seed: run_trial(spec, seed, algorithms, plan.sdp, with_phi),
            ))
    job = runner.map(tasks)

    by_cell: Dict[tuple, List[Any]] = {cell: [] for cell in plan.cells()}
    for task in job.results():
        n, p, _ = task.key
        if task.status == TrialStatus.COMPLETED:
            by_cell[(n, p)].append(task.result)
        else:
            by_cell[(n, p)].append({algo: AlgorithmOutcome(error=task.error, elapsed_ms=task.elapsed_ms)
                                    for algo in algorithms})
    return by_cell


def _mean(values: List[Optional[float]]) -> Optional[float]:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def _std(values: List[Optional[float]]) -> Optional[float]:
    values = [v for v in values if v is not None]
    return float(np.std(values)) if values else None


def run_sweep(plan: ExperimentPlan, runner: Optional[TrialRunner] = None) -> List[SweepRow]:
    logger.info(f"Sweep over {len(plan.cells())} cells, {plan.trials} trials each, algorithms {[a.value for a in plan.algorithms]}")
    by_cell = _run_cells(plan, plan.algorithms, with_phi=False, runner=runner)

    rows = []
    for n, p in plan.cells():
        spec = plan.spec_for(n, p)
        _, gamma = separation(spec)
        for algorithm in plan.algorithms:
            outcomes = [trial[algorithm] for trial in by_cell[(n, p)]]
            metrics = [o.metrics for o in outcomes if o.metrics is not None]
            rows.append(SweepRow(
                algorithm=algorithm.value,
                n=n,
                p=p,
                gamma=gamma,
                np_gamma_sq=n * p * gamma ** 2,
                trials=plan.trials,
                mean_success=_mean([m.success_rate for m in metrics]),
                std_success=_std([m.success_rate for m in metrics]),
                mean_theta_deg=_mean([m.theta for m in metrics]),
                mean_sin_theta=_mean([m.sin_theta for m in metrics]),
                mean_z_l1=_mean([m.z_l1 for m in metrics]),
                mean_z_frob=_mean([m.z_frob for m in metrics]),
                mean_z_op=_mean([m.z_op for m in metrics]),
                failures=len(outcomes) - len(metrics),
                wall_ms=sum(o.elapsed_ms for o in outcomes),
            ))
        logger.info(f"Cell n={n} p={p} done")
    return rows


def reference_angle_deg(spec: MixtureSpec) -> float:
    """Static angle between v1_bar and the membership vector"""
    return aligned_angle_deg(reference_v1(spec), spec.membership.astype(float))


def run_angles(plan: ExperimentPlan, runner: Optional[TrialRunner] = None) -> List[AngleRow]:
    algorithms = [Algorithm.SDP, Algorithm.SPECTRAL_SIGN]
    logger.info(f"Angle study over {len(plan.cells())} cells, {plan.trials} trials each")
    by_cell = _run_cells(plan, algorithms, with_phi=True, runner=runner)

    rows = []
    for n, p in plan.cells():
        trials = by_cell[(n, p)]
        sdp = [t[Algorithm.SDP].metrics for t in trials]
        spectral = [t[Algorithm.SPECTRAL_SIGN].metrics for t in trials]
        paired = [(s, v) for s, v in zip(sdp, spectral) if s is not None and v is not None]
        rows.append(AngleRow(
            n=n,
            p=p,
            w1=plan.w1,
            trials=plan.trials,
            mean_theta_sdp=_mean([s.theta_sdp for s, _ in paired]),
            std_theta_sdp=_std([s.theta_sdp for s, _ in paired]),
            mean_theta_1=_mean([v.theta_1 for _, v in paired]),
            std_theta_1=_std([v.theta_1 for _, v in paired]),
            mean_phi=_mean([s.phi for s, _ in paired]),
            mean_sin_theta_sdp=_mean([s.sin_theta_sdp for s, _ in paired]),
            mean_sin_theta_1=_mean([v.sin_theta_1 for _, v in paired]),
            mean_z_l1=_mean([s.z_l1 for s, _ in paired]),
            mean_z_frob=_mean([s.z_frob for s, _ in paired]),
            mean_z_op=_mean([s.z_op for s, _ in paired]),
            reference_angle_deg=reference_angle_deg(plan.spec_for(n, p)),
            failures=len(trials) - len(paired),
            wall_ms=sum(t[a].elapsed_ms for t in trials for a in algorithms),
        ))
        logger.info(f"Cell n={n} p={p} done")
    return rows


VERIFY_SUITES = ("identities", "recovery", "inequalities", "monte_carlo", "bounds", "envelope")


def _check(name: str, tag: str, statistic: float, bound: float, passed: bool) -> CheckResult:
    return CheckResult(name, tag, float(statistic), float(bound), bool(passed))


def _guarded(report: VerificationReport, name: str, tag: str,
             compute: Callable[[], Any]) -> Optional[Any]:
    """Add the checks `compute` returns; an exception becomes one failed check carrying its text"""
    try:
        result = compute()
    except Exception as e:
        logger.exception(f"Check {name} [{tag}] raised")
        report.add(CheckResult(name, tag, float("nan"), float("nan"), False,
                               error=f"{type(e).__name__}: {e}"))
        return None
    if isinstance(result, CheckResult):
        report.add(result)
    else:
        report.extend(result)
    return result


def _identity_suite(report: VerificationReport, seed: int, centering: Callable[[np.ndarray], CenteredData]):
    rng = np.random.default_rng(derive_seed(seed, 1))
    for instance in range(50):
        n = int(rng.integers(4, 31))
        p = int(rng.integers(2, 101))
        spec = make_gaussian_spec(
            alpha=float(rng.uniform(0.2, 0.9)),
            eps=0.0,
            p=p,
            n=n,
            w1=float(rng.choice([0.5, 0.7])),
            sigma1=float(rng.uniform(0.5, 1.5)),
            sigma2=float(rng.uniform(0.5, 1.5)),
        )
        dataset_seed = derive_seed(seed, 1, instance)
        _guarded(report, "identities", fingerprint(spec),
                 lambda: identity_checks(sample(spec, dataset_seed), centering))


def _recovery_suite(report: VerificationReport, opts: SolverOptions):
    tight = opts.model_copy(update={"tol": min(opts.tol, 1e-12), "max_iters": max(opts.max_iters, 5000)})
    for n in (8, 12, 16):
        for w1 in (0.5, 0.7):
            spec = make_gaussian_spec(0.5, 0.0, 20, n, w1, sigma1=0.0, sigma2=0.0)
            tag = fingerprint(spec)
            truth = spec.membership
            R = reference_R(spec)

            def recovery():
                z_l1 = z_distances(solve(R, tight), truth.astype(float))[0]
                return _check("reference_recovery", tag, z_l1, 1e-6, z_l1 < 1e-6)

            def maxcut():
                rate = success_rate(brute_force_maxcut(R)[0], truth)
                return _check("reference_maxcut", tag, rate, 1.0, rate == 1.0)

            def peng_wei():
                Y = center(sample(spec, 0).X).Y
                rate = success_rate(peng_wei_split(reference_v1(spec), Y=Y), truth)
                return _check("reference_peng_wei", tag, rate, 1.0, rate == 1.0)

            _guarded(report, "reference_recovery", tag, recovery)
            _guarded(report, "reference_maxcut", tag, maxcut)
            _guarded(report, "reference_peng_wei", tag, peng_wei)


def _sandwich_checks(sandwich, tag: str) -> List[CheckResult]:
    return [
        _check("sandwich_lower", tag, sandwich.gap, 0.0, sandwich.lower_holds),
        _check("sandwich_upper", tag, sandwich.gap, sandwich.upper_bound, sandwich.upper_holds),
        _check("delta_chain", tag, sandwich.delta, sandwich.delta_bound, sandwich.delta_holds),
        _check(
            "maxcut_dominates_rounding", tag, sandwich.rounded_value, sandwich.maxcut_value,
            sandwich.rounded_value <= sandwich.maxcut_value + 1e-9 * max(1.0, abs(sandwich.maxcut_value)),
        ),
    ]


def _inequality_suite(report: VerificationReport, seed: int, opts: SolverOptions):
    rng = np.random.default_rng(derive_seed(seed, 3))
    for instance in range(100):
        M = rng.standard_normal((8, 8))
        M = (M + M.T) / 2.0
        tag = f"sym8-{instance}"

        def grothendieck():
            _, ratio = grothendieck_check(M, opts)
            return _check("grothendieck_ratio", tag, ratio, GROTHENDIECK_K, ratio <= GROTHENDIECK_K + 1e-6)

        def chain():
            exact, spectral = inf_to_one_exact(M), op_norm(M)
            return _check("inf_to_one_chain", tag, exact, 8 * spectral, exact <= 8 * spectral + 1e-8)

        _guarded(report, "grothendieck_ratio", tag, grothendieck)
        _guarded(report, "inf_to_one_chain", tag, chain)

    spec = make_gaussian_spec(0.5, 0.0, 20, 10, 0.5)
    tag = fingerprint(spec)

    def curvature():
        violations = 0
        for _ in range(1000):
            Z = random_feasible_Z(10, int(rng.integers(1, 11)), rng)
            _, _, holds = curvature_check(spec, Z)
            violations += not holds
        return _check("curvature", tag, violations, 0, violations == 0)

    def curvature_equality():
        lhs, rhs, _ = curvature_check(spec, np.eye(10))
        gap = abs(lhs - rhs)
        return _check("curvature_equality", tag, gap, 1e-9 * abs(lhs), gap <= 1e-9 * abs(lhs))

    _guarded(report, "curvature", tag, curvature)
    _guarded(report, "curvature_equality", tag, curvature_equality)

    moderate = make_gaussian_spec(0.25, 0.0, 200, 16, 0.5)
    for run in range(20):
        run_tag = f"{fingerprint(moderate)}-{run}"
        run_seed = derive_seed(seed, 3, run)
        _guarded(report, "sandwich", run_tag,
                 lambda: _sandwich_checks(sandwich_check(moderate, run_seed, opts), run_tag))

    strong = make_gaussian_spec(0.9, 0.0, 200, 16, 0.5)
    _guarded(report, "high_snr_delta", fingerprint(strong),
             lambda: high_snr_check(strong, derive_seed(seed, 3, 100), opts))

    silent = make_gaussian_spec(0.5, 0.0, 200, 16, 0.5, sigma1=0.0, sigma2=0.0)

    def zero_noise_gap():
        sandwich = sandwich_check(silent, derive_seed(seed, 3, 101), opts)
        _, gamma = separation(silent)
        bound = 1e-6 * 16 ** 2 * 200 * gamma
        return _check("zero_noise_gap", sandwich.fingerprint, sandwich.gap, bound, sandwich.gap <= bound)

    _guarded(report, "zero_noise_gap", fingerprint(silent), zero_noise_gap)


def _monte_carlo_suite(report: VerificationReport, seed: int):
    spec = make_gaussian_spec(0.3, 0.0, 100, 16, 0.5, sigma1=1.0, sigma2=1.5)
    tag = fingerprint(spec)
    _guarded(report, "bias_monte_carlo", tag, lambda: bias_monte_carlo(spec, 500, derive_seed(seed, 4)))
    _guarded(report, "gram_monte_carlo", tag, lambda: gram_monte_carlo(spec, 500, derive_seed(seed, 5)))


def _bounds_suite(report: VerificationReport, seed: int):
    specs = [
        make_gaussian_spec(0.3, 0.0, 100, 16, 0.5),
        make_gaussian_spec(0.3, 0.0, 100, 20, 0.7, sigma1=1.0, sigma2=1.5),
        make_bernoulli_spec(0.04, 0.004, 400, 40, 0.5),
    ]
    rng = np.random.default_rng(derive_seed(seed, 6))
    for spec in specs:
        tag = fingerprint(spec)
        E = rng.standard_normal((spec.n, spec.n)) * 0.01 * spec.p * separation(spec)[1]
        S = reference_R(spec) + (E + E.T) / 2.0

        def davis_kahan():
            sin_theta, bound = davis_kahan_bound(S, spec)
            return _check("davis_kahan", tag, sin_theta, bound, sin_theta <= bound + 1e-8)

        _guarded(report, "bias_bound", tag, lambda: bias_bound_check(spec))
        _guarded(report, "mixed_term", tag, lambda: mixed_term_check(spec))
        _guarded(report, "davis_kahan", tag, davis_kahan)


def _envelope_suite(report: VerificationReport, seed: int):
    small, large = (make_gaussian_spec(0.2, 0.0, p, 40, 0.5) for p in (400, 1600))

    def scaling():
        reports = [deviation_envelope(spec, 30, derive_seed(seed, 7, spec.p)) for spec in (small, large)]
        ratio = reports[1].c_hat / reports[0].c_hat
        return _check("envelope_scaling", reports[1].fingerprint, ratio, 2.5, 0.4 <= ratio <= 2.5)

    silent = make_gaussian_spec(0.2, 0.0, 400, 40, 0.5, sigma1=0.0, sigma2=0.0)

    def zero_noise():
        envelope = deviation_envelope(silent, 30, derive_seed(seed, 8))
        bound = 1e-9 * 40 * 400
        return _check("zero_noise_envelope", envelope.fingerprint, envelope.max_deviation, bound,
                      envelope.max_deviation <= bound)

    _guarded(report, "envelope_scaling", fingerprint(large), scaling)
    _guarded(report, "zero_noise_envelope", fingerprint(silent), zero_noise)


def run_verify(
    seed: int = 0,
    centering: Callable[[np.ndarray], CenteredData] = center,
    opts: Optional[SolverOptions] = None,
    suites: Optional[Sequence[str]] = None,
) -> VerificationReport:
    """Run the fixed-size verification suites; `centering` is swappable for mutation tests"""
    opts = opts or SolverOptions.from_settings()
    suites = list(suites or VERIFY_SUITES)
    unknown = set(suites) - set(VERIFY_SUITES)
    if unknown:
        raise InvalidConfigError(f"Unknown verification suites: {sorted(unknown)}")

    report = VerificationReport()
    for suite in suites:
        logger.info(f"Verification suite: {suite}")
        if suite == "identities":
            _identity_suite(report, seed, centering)
        elif suite == "recovery":
            _recovery_suite(report, opts)
        elif suite == "inequalities":
            _inequality_suite(report, seed, opts)
        elif suite == "monte_carlo":
            _monte_carlo_suite(report, seed)
        elif suite == "bounds":
            _bounds_suite(report, seed)
        else:
            _envelope_suite(report, seed)

    logger.info(f"Verification finished: {len(report.checks)} checks, {len(report.failures)} failures")
    return report
