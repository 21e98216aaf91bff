from typing import Callable, Iterator, List, Optional, Tuple
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
import logging
import math

import numpy as np

from ..app.config import settings
from ..app.errors import EnumerationLimitError, InvalidConfigError
from ..app.utils.matrix_io import write_rows_csv
from .metrics import angle_rad, success_rate
from .mixture_model import (
    Dataset,
    MixtureSpec,
    derive_seed,
    fingerprint,
    sample,
    separation,
    variance_discrepancy_xi,
    variance_profiles,
)
from .preprocessing import (
    CenteredData,
    bias_components,
    build_A,
    center,
    expected_bias,
    expected_gram,
    expected_lambda,
    expected_tau,
    oracle_B,
    projector_identity,
    reference_R,
)
from .sdp_solver import SolverOptions, round_signs, solve
from .spectral import (
    check_symmetric,
    operator_norm,
    reference_v1,
    row_sum_bound,
    sign_split,
    top_eigen,
)

logger = logging.getLogger(__name__)

GROTHENDIECK_K = 1.783
ENUM_CHUNK = 1 << 15
MC_STANDARD_ERRORS = 4.0
HIGH_SNR_DELTA = 1e-6


class NormMethod(Enum):
    EXACT_ENUM = "exact_enum"
    POWER_ITER = "power_iter"


@dataclass
class NormReport:
    op_norm: float
    inf_to_one: float
    cut_norm_lb: float
    method: NormMethod


@dataclass
class CheckResult:
    name: str
    fingerprint: str
    statistic: float
    bound: float
    passed: bool
    error: Optional[str] = None


@dataclass
class VerificationReport:
    checks: List[CheckResult] = field(default_factory=list)

    def add(self, check: CheckResult) -> CheckResult:
        self.checks.append(check)
        level = logging.DEBUG if check.passed else logging.ERROR
        logger.log(
            level,
            f"{check.name} [{check.fingerprint}]: statistic={check.statistic:.6g} "
            f"bound={check.bound:.6g} passed={check.passed}"
            + (f" error={check.error}" if check.error else ""),
        )
        return check

    def extend(self, checks):
        for check in checks:
            self.add(check)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]

    def write_csv(self, path: Path) -> Path:
        return write_rows_csv(self.checks, path)


@dataclass
class EnvelopeReport:
    fingerprint: str
    n: int
    p: int
    trials: int
    max_deviation: float
    mean_deviation: float
    c_hat: float
    max_bias_deviation: float
    mean_bias_deviation: float
    xi_hat: float
    deviations: List[float] = field(default_factory=list, repr=False)


@dataclass
class SandwichReport:
    fingerprint: str
    seed: int
    gap: float
    cut_norm: float
    upper_bound: float
    delta: float
    delta_bound: float
    success_rate: float
    maxcut_agrees: bool
    maxcut_value: float
    rounded_value: float
    lower_holds: bool
    upper_holds: bool
    delta_holds: bool

    @property
    def passed(self) -> bool:
        return self.lower_holds and self.upper_holds and self.delta_holds


def _check_cap(n: int, cap: Optional[int]):
    cap = settings.enumeration_cap if cap is None else cap
    if n > cap:
        raise EnumerationLimitError(f"Exact enumeration needs n <= {cap}, got n={n}")


def _sign_blocks(n: int) -> Iterator[Tuple[int, np.ndarray]]:
    """All s in {-1, 1}^n with s[0] = +1, in lexicographic order (+1 before -1)"""
    total = 1 << (n - 1)
    shifts = np.arange(n - 2, -1, -1, dtype=np.int64)
    for start in range(0, total, ENUM_CHUNK):
        k = np.arange(start, min(start + ENUM_CHUNK, total), dtype=np.int64)
        bits = (k[:, None] >> shifts[None, :]) & 1
        signs = np.empty((k.shape[0], n))
        signs[:, 0] = 1.0
        signs[:, 1:] = 1.0 - 2.0 * bits
        yield start, signs


def op_norm(M: np.ndarray, tol: Optional[float] = None, scale: Optional[float] = None) -> float:
    """||M||_2; `scale` is the size M is measured against, its row-sum bound by default"""
    M = check_symmetric(M, "M")
    n = M.shape[0]
    tol = settings.eigen_tol if tol is None else tol
    bound = row_sum_bound(M)
    if bound == 0.0:
        return 0.0
    return operator_norm(
        lambda x: M @ x,
        n,
        bound if scale is None else max(scale, bound),
        tol,
        settings.eigen_max_iters_factor * n + 1000,
    )


def inf_to_one_exact(M: np.ndarray, cap: Optional[int] = None) -> float:
    """max over s in {-1, 1}^n of ||M s||_1"""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {M.shape}")
    n = M.shape[0]
    _check_cap(n, cap)
    if n == 0:
        return 0.0

    best = 0.0
    # ||M(-s)||_1 = ||M s||_1, so s[0] = +1 covers every value
    for _, signs in _sign_blocks(n):
        best = max(best, float(np.abs(signs @ M.T).sum(axis=1).max()))
    return best


def norm_report(M: np.ndarray) -> NormReport:
    M = check_symmetric(M, "M")
    spectral = op_norm(M)
    if M.shape[0] <= settings.enumeration_cap:
        exact = inf_to_one_exact(M)
        return NormReport(op_norm=spectral, inf_to_one=exact, cut_norm_lb=exact / 4.0, method=NormMethod.EXACT_ENUM)

    lower = float(np.abs(M @ sign_split(top_eigen(M).vector)).sum())
    logger.debug(f"norm_report: n={M.shape[0]} above enumeration cap, using a sign lower bound")
    return NormReport(op_norm=spectral, inf_to_one=lower, cut_norm_lb=lower / 4.0, method=NormMethod.POWER_ITER)


def grothendieck_check(M: np.ndarray, opts: Optional[SolverOptions] = None) -> Tuple[float, float]:
    """(max |<M, Z>| over the elliptope, that value over ||M||_inf->1)"""
    M = check_symmetric(M, "M")
    _check_cap(M.shape[0], None)
    sdp_value = max(solve(M, opts).objective, solve(-M, opts).objective)
    exact = inf_to_one_exact(M)
    ratio = sdp_value / exact if exact > 0 else 0.0
    if ratio > GROTHENDIECK_K + 1e-6:
        logger.error(f"Grothendieck ratio {ratio:.6f} exceeds {GROTHENDIECK_K}")
    return sdp_value, ratio


def brute_force_maxcut(A: np.ndarray) -> Tuple[np.ndarray, float]:
    """Exhaustive max of x^T A x over {-1, 1}^n, first maximizer in lexicographic order"""
    A = check_symmetric(A, "A")
    n = A.shape[0]
    _check_cap(n, None)
    tie = 1e-12 * max(1.0, float(np.abs(A).sum()))

    best_value = -np.inf
    best_x = None
    # x and -x share a value; the lexicographic first maximizer has x[0] = +1
    for _, signs in _sign_blocks(n):
        values = np.einsum("ij,ij->i", signs @ A, signs)
        block_max = float(values.max())
        if block_max > best_value + tie:
            first = int(np.flatnonzero(values >= block_max - tie)[0])
            best_value = float(values[first])
            best_x = signs[first].astype(int)
    return best_x, best_value


def optimal_Z(spec: MixtureSpec) -> np.ndarray:
    x = spec.membership.astype(float)
    return np.outer(x, x)


def curvature_check(spec: MixtureSpec, Z: np.ndarray) -> Tuple[float, float, bool]:
    Z = check_symmetric(Z, "Z")
    if Z.shape[0] != spec.n:
        raise ValueError(f"Z has order {Z.shape[0]}, spec has n={spec.n}")
    if np.max(np.abs(Z)) > 1.0 + 1e-9:
        raise ValueError("Z entries must lie in [-1, 1]")
    _, gamma = separation(spec)
    z_star = optimal_Z(spec)
    lhs = float(np.sum(reference_R(spec) * (z_star - Z)))
    rhs = spec.p * gamma * spec.w_min ** 2 * float(np.abs(Z - z_star).sum())
    holds = lhs >= rhs - 1e-9 * spec.n ** 2 * spec.p * gamma
    return lhs, rhs, holds


def random_feasible_Z(n: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    V = rng.standard_normal((n, rank))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return V @ V.T


def _spec_trials(spec: MixtureSpec, trials: int, seed: int) -> Iterator[Tuple[int, CenteredData]]:
    for trial in range(trials):
        dataset = sample(spec, derive_seed(seed, trial))
        yield trial, center(dataset.X)


def deviation_envelope(spec: MixtureSpec, trials: int, seed: int) -> EnvelopeReport:
    if trials < 30:
        raise InvalidConfigError(f"deviation_envelope needs at least 30 trials, got {trials}")
    n, p = spec.n, spec.p
    _, gamma = separation(spec)
    expected = expected_gram(spec)
    R = reference_R(spec)
    scale = max(math.sqrt(p * n), n) + n * math.sqrt(p * gamma)
    signal = n * p * gamma
    gram_scale = row_sum_bound(expected)
    bias_scale = row_sum_bound(R)

    deviations, bias_deviations = [], []
    for _, cd in _spec_trials(spec, trials, seed):
        deviations.append(op_norm(cd.gram - expected, scale=gram_scale))
        bias_deviations.append(op_norm(oracle_B(cd, spec) - R, scale=bias_scale))

    report = EnvelopeReport(
        fingerprint=fingerprint(spec),
        n=n,
        p=p,
        trials=trials,
        max_deviation=max(deviations),
        mean_deviation=float(np.mean(deviations)),
        c_hat=max(deviations) / scale,
        max_bias_deviation=max(bias_deviations),
        mean_bias_deviation=float(np.mean(bias_deviations)),
        xi_hat=max(bias_deviations) / signal if signal > 0 else math.nan,
        deviations=deviations,
    )
    logger.info(
        f"Envelope n={n} p={p}: max deviation {report.max_deviation:.4g}, "
        f"c_hat {report.c_hat:.4g}, xi_hat {report.xi_hat:.4g}"
    )
    return report


def sandwich_check(spec: MixtureSpec, seed: int, opts: Optional[SolverOptions] = None) -> SandwichReport:
    if spec.n > 20:
        raise EnumerationLimitError(f"sandwich_check needs n <= 20, got n={spec.n}")
    n = spec.n
    _, gamma = separation(spec)
    signal = n ** 2 * spec.p * gamma
    dataset = sample(spec, seed)
    cd = center(dataset.X)
    A = build_A(cd)
    sol = solve(A, opts)

    R = reference_R(spec)
    z_star = optimal_Z(spec)
    z_hat = sol.Z()
    gap = float(np.sum(R * (z_star - z_hat)))
    cut_norm = inf_to_one_exact(oracle_B(cd, spec) - R)
    upper_bound = 2.0 * GROTHENDIECK_K * cut_norm
    delta = float(np.abs(z_hat - z_star).sum()) / n ** 2
    delta_bound = upper_bound / (signal * spec.w_min ** 2) if signal > 0 else math.inf
    slack = 1e-9 * max(signal, 1.0)

    partition = round_signs(sol.xhat) if sol.xhat is not None else sign_split(sol.factor[:, 0])
    x_opt, maxcut_value = brute_force_maxcut(A)
    rounded_value = float(partition @ A @ partition)

    return SandwichReport(
        fingerprint=fingerprint(spec),
        seed=int(seed),
        gap=gap,
        cut_norm=cut_norm,
        upper_bound=upper_bound,
        delta=delta,
        delta_bound=delta_bound,
        success_rate=success_rate(partition, dataset.membership),
        maxcut_agrees=success_rate(partition, x_opt) == 1.0,
        maxcut_value=maxcut_value,
        rounded_value=rounded_value,
        lower_holds=gap >= -slack,
        upper_holds=gap <= upper_bound + slack,
        delta_holds=delta <= delta_bound + 1e-9,
    )


def high_snr_check(spec: MixtureSpec, seed: int, opts: Optional[SolverOptions] = None) -> CheckResult:
    """Far above the recovery threshold the relaxation is tight: delta vanishes up to solver accuracy"""
    opts = opts or SolverOptions.from_settings()
    tight = opts.model_copy(update={"tol": min(opts.tol, 1e-12), "max_iters": max(opts.max_iters, 5000)})
    sandwich = sandwich_check(spec, seed, tight)
    return CheckResult("high_snr_delta", sandwich.fingerprint, sandwich.delta, HIGH_SNR_DELTA,
                       sandwich.delta <= HIGH_SNR_DELTA)


def davis_kahan_bound(S: np.ndarray, spec: MixtureSpec) -> Tuple[float, float]:
    """(sin angle(v1(S), v1_bar), 2 ||S - R||_2 / (w1 w2 n p gamma))"""
    S = check_symmetric(S, "S")
    w1, w2 = spec.weights
    _, gamma = separation(spec)
    v1 = top_eigen(S).vector
    sin_theta = math.sin(angle_rad(v1, reference_v1(spec)))
    bound = 2.0 * op_norm(S - reference_R(spec)) / (w1 * w2 * spec.n * spec.p * gamma)
    return sin_theta, bound


def bias_bound_check(spec: MixtureSpec) -> CheckResult:
    """||E B - R||_2 against 2/3 xi n p gamma, or p gamma / 3 for equal variance profiles"""
    if spec.n < 4:
        raise ValueError("bias_bound_check needs n >= 4")
    v1, v2 = variance_profiles(spec)
    _, gamma = separation(spec)
    statistic = op_norm(expected_bias(spec))
    if v1 == v2:
        name, bound = "bias_bound_equal_profiles", spec.p * gamma / 3.0
    else:
        name = "bias_bound"
        bound = 2.0 / 3.0 * variance_discrepancy_xi(spec) * spec.n * spec.p * gamma
    return CheckResult(name, fingerprint(spec), statistic, bound, statistic <= bound * (1 + 1e-9))


def mixed_term_check(spec: MixtureSpec) -> CheckResult:
    v1, v2 = variance_profiles(spec)
    statistic = op_norm(bias_components(spec).W_mixed)
    bound = abs(v1 - v2) * max(spec.weights)
    return CheckResult("mixed_term", fingerprint(spec), statistic, bound, statistic <= bound * (1 + 1e-9) + 1e-12)


def tl_identity_check(dataset: Dataset) -> CheckResult:
    """(n - 1)|lambda - E lambda| = |tau - E tau|"""
    spec = dataset.spec
    cd = center(dataset.X)
    left = (spec.n - 1) * abs(cd.lam - expected_lambda(spec))
    right = abs(cd.tau - expected_tau(spec))
    statistic = abs(left - right)
    bound = 1e-9 * max(1.0, right, abs(cd.tau))
    return CheckResult("tau_lambda_identity", fingerprint(spec), statistic, bound, statistic <= bound)


def lambda_identity_check(X: np.ndarray, tag: str, centering: Callable[[np.ndarray], CenteredData] = center) -> CheckResult:
    cd = centering(X)
    statistic = abs(cd.lam + cd.tau / (cd.n - 1))
    bound = 1e-12 * max(1.0, abs(cd.tau))
    return CheckResult("lambda_identity", tag, statistic, bound, statistic <= bound)


def identity_checks(
    dataset: Dataset,
    centering: Callable[[np.ndarray], CenteredData] = center,
) -> List[CheckResult]:
    """Exact algebraic identities of one dataset"""
    spec = dataset.spec
    tag = fingerprint(spec)
    X = np.asarray(dataset.X, dtype=float)
    n = spec.n
    cd = centering(X)
    results = []

    # reference side only; cd.gram comes from the injected centering
    _, projected = projector_identity(X)
    statistic = float(np.max(np.abs(cd.gram - projected)))
    bound = 1e-9 * max(1.0, float(np.max(np.abs(projected))))
    results.append(CheckResult("projector_identity", tag, statistic, bound, statistic <= bound))

    results.append(lambda_identity_check(X, tag, centering))

    ones = np.ones(n)
    scale = max(1.0, float(np.trace(cd.gram)))
    statistic = abs(float(ones @ cd.gram @ ones))
    results.append(CheckResult("gram_annihilates_ones", tag, statistic, 1e-9 * n * scale, statistic <= 1e-9 * n * scale))

    A = build_A(cd)
    statistic = abs(float(A.sum()) - float(np.trace(cd.gram)))
    results.append(CheckResult("A_inner_E", tag, statistic, 1e-9 * n * scale, statistic <= 1e-9 * n * scale))

    w1, w2 = spec.weights
    delta_sq, _ = separation(spec)
    expected_trace = w1 * w2 * n * delta_sq
    statistic = abs(float(np.trace(reference_R(spec))) - expected_trace)
    bound = 1e-12 * max(1.0, expected_trace)
    results.append(CheckResult("trace_R", tag, statistic, bound, statistic <= bound))

    results.append(tl_identity_check(dataset))

    angle = _shared_eigvec_angle(cd.gram, A, oracle_B(cd, spec))
    if angle is not None:
        results.append(CheckResult("shared_leading_eigvec", tag, angle, 1e-8, angle <= 1e-8))
    return results


def _shared_eigvec_angle(*matrices: np.ndarray) -> Optional[float]:
    """Largest pairwise angle (radians) between leading eigenvectors; None if any spectrum is degenerate"""
    vectors = []
    for M in matrices:
        values, eigvecs = np.linalg.eigh(M)
        gap = values[-1] - values[-2]
        if gap <= 1e-6 * max(abs(values[-1]), 1.0):
            logger.debug("Skipping shared eigenvector check: top eigenvalue gap too small")
            return None
        vectors.append(eigvecs[:, -1])
    worst = 0.0
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            cosine = float(vectors[i] @ vectors[j])
            sine = float(np.linalg.norm(vectors[i] - cosine * vectors[j]))
            worst = max(worst, math.atan2(sine, abs(cosine)))
    return worst


def _monte_carlo(
    name: str,
    spec: MixtureSpec,
    trials: int,
    seed: int,
    statistic: Callable[[CenteredData], np.ndarray],
    expected: np.ndarray,
) -> CheckResult:
    if trials < 2:
        raise InvalidConfigError("Monte-Carlo checks need at least 2 trials")
    total = np.zeros_like(expected)
    total_sq = np.zeros_like(expected)
    for _, cd in _spec_trials(spec, trials, seed):
        value = statistic(cd)
        total += value
        total_sq += value * value

    mean = total / trials
    variance = np.maximum(total_sq / trials - mean * mean, 0.0) * trials / (trials - 1)
    stderr = np.sqrt(variance / trials)
    error = np.abs(mean - expected)
    floor = 1e-9 * max(1.0, float(np.max(np.abs(expected))))
    z = error / np.maximum(stderr, floor)
    worst = float(z.max())
    return CheckResult(name, fingerprint(spec), worst, MC_STANDARD_ERRORS, worst <= MC_STANDARD_ERRORS)


def bias_monte_carlo(spec: MixtureSpec, trials: int, seed: int) -> CheckResult:
    R = reference_R(spec)
    return _monte_carlo(
        "bias_monte_carlo", spec, trials, seed,
        lambda cd: oracle_B(cd, spec) - R,
        expected_bias(spec),
    )


def gram_monte_carlo(spec: MixtureSpec, trials: int, seed: int) -> CheckResult:
    return _monte_carlo("gram_monte_carlo", spec, trials, seed, lambda cd: cd.gram, expected_gram(spec))
