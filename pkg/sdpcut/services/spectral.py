from typing import Callable, List, Optional, Tuple, TYPE_CHECKING
from dataclasses import dataclass
import logging
import math

import numpy as np

from ..app.config import settings
from ..app.errors import (
    DegenerateSpectrumError,
    DimensionMismatchError,
    NonConvergenceError,
)

if TYPE_CHECKING:
    from .mixture_model import MixtureSpec

logger = logging.getLogger(__name__)

STALL_WINDOW = 50
SHIFT_MARGIN = 0.05
ZERO_RTOL = 1e-13
CAP_GROWTH = 20


@dataclass
class EigenResult:
    value: float
    vector: np.ndarray
    iterations: int
    residual: float


def start_vector(n: int) -> np.ndarray:
    """Deterministic start (1, 1/2, 1/3, ...) normalized"""
    x = 1.0 / np.arange(1, n + 1, dtype=float)
    return x / np.linalg.norm(x)


def fix_sign(x: np.ndarray) -> np.ndarray:
    """Flip x so that its first nonzero coordinate is positive"""
    scale = np.max(np.abs(x)) if x.size else 0.0
    if scale == 0.0:
        return x
    nonzero = np.flatnonzero(np.abs(x) > 1e-12 * scale)
    if nonzero.size and x[nonzero[0]] < 0:
        return -x
    return x


def check_symmetric(S: np.ndarray, name: str = "matrix") -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if S.size and np.max(np.abs(S - S.T)) > 1e-10 * scale:
        raise ValueError(f"{name} is not symmetric")
    return S


def row_sum_bound(S: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(S), axis=1))) if S.size else 0.0


def _shift(best: float, lower: float) -> float:
    """Smallest c keeping best + c above |lower + c|, plus a margin"""
    spread = max(best - lower, 0.0)
    return max(0.0, SHIFT_MARGIN * spread / 2.0 - (best + lower) / 2.0)


def _stalled(values: List[float], residuals: List[float]) -> bool:
    """Quotient frozen and residual no longer falling over the last window"""
    if len(values) < STALL_WINDOW:
        return False
    recent = np.array(values[-STALL_WINDOW:])
    scale = max(float(np.max(np.abs(recent))), 1e-300)
    if float(recent.max() - recent.min()) > 1e-12 * scale:
        return False
    half = STALL_WINDOW // 2
    return min(residuals[-half:]) >= 0.99 * min(residuals[-STALL_WINDOW:-half])


def _projected_iterations(residuals: List[float], target: float) -> Optional[float]:
    """Iterations still needed at the residual decay rate of the last window"""
    if len(residuals) <= STALL_WINDOW or target <= 0.0:
        return None
    now, before = residuals[-1], residuals[-1 - STALL_WINDOW]
    if now <= 0.0 or before <= 0.0 or now >= before:
        return None
    rate = math.log(now / before) / STALL_WINDOW
    return math.log(target / now) / rate


def _iterate(
    matvec: Callable[[np.ndarray], np.ndarray],
    n: int,
    lower: float,
    tol: float,
    max_iters: int,
    floor_of: Callable[[float], float],
    start: Optional[np.ndarray],
) -> EigenResult:
    x = start_vector(n) if start is None else np.asarray(start, dtype=float)
    x = x / np.linalg.norm(x)

    values: List[float] = []
    residuals: List[float] = []
    best = -np.inf
    value, residual = 0.0, np.inf
    limit, hard_limit = max_iters, CAP_GROWTH * max_iters
    iteration = 0
    while iteration < limit:
        iteration += 1
        y = matvec(x)
        value = float(x @ y)
        residual = float(np.linalg.norm(y - value * x))
        if residual <= max(tol * abs(value), floor_of(value)):
            return EigenResult(value=value, vector=fix_sign(x), iterations=iteration, residual=residual)
        values.append(value)
        residuals.append(residual)
        best = max(best, value)

        z = y + _shift(best, lower) * x
        norm = np.linalg.norm(z)
        if norm == 0.0:
            break
        x = z / norm

        if iteration == limit and limit < hard_limit:
            needed = _projected_iterations(residuals, max(tol * abs(value), floor_of(value)))
            if needed is not None and iteration + needed <= hard_limit:
                limit = min(hard_limit, iteration + int(1.25 * needed) + STALL_WINDOW)
                logger.debug(f"power iteration: extending cap to {limit} (residual {residual:.3g})")

    if _stalled(values, residuals):
        raise DegenerateSpectrumError(
            f"Rayleigh quotient stalled at {value:.6g} with residual {residual:.3g}"
        )
    raise NonConvergenceError(
        f"Power iteration did not converge in {iteration} iterations (residual {residual:.3g})",
        iterations=iteration,
        residual=residual,
    )


def power_iterate(
    matvec: Callable[[np.ndarray], np.ndarray],
    n: int,
    lower: float,
    tol: float,
    max_iters: int,
    scale: Optional[float] = None,
    start: Optional[np.ndarray] = None,
) -> EigenResult:
    """Shifted power iteration for the top eigenpair of a symmetric operator S.

    `lower` must bound the spectrum of S from below; 0 for PSD operators.
    The shift tracks the best Rayleigh quotient so it stays as small as the
    bound allows. `scale` bounds ||S||; a residual below ZERO_RTOL * scale
    is rounding noise and counts as converged. The cap grows up to
    CAP_GROWTH * max_iters while the residual keeps shrinking.
    """
    if scale is None:
        return _iterate(matvec, n, lower, tol, max_iters,
                        lambda value: ZERO_RTOL * max(abs(value), abs(lower)), start)
    return _iterate(matvec, n, lower, tol, max_iters, lambda value: ZERO_RTOL * scale, start)


def operator_norm(
    matvec: Callable[[np.ndarray], np.ndarray],
    n: int,
    scale: float,
    tol: float,
    max_iters: int,
) -> float:
    """max |eigenvalue| of an implicit symmetric operator M: the larger top eigenvalue of M and -M.

    `scale` must bound ||M||; it is the shift floor for both runs and sets the
    rounding level below which a residual counts as converged.
    """
    if scale == 0.0:
        return 0.0
    upper = power_iterate(matvec, n, -scale, tol, max_iters, scale=scale)
    lower = power_iterate(lambda x: -matvec(x), n, -scale, tol, max_iters, scale=scale)
    return max(upper.value, lower.value, 0.0)


def top_eigen(S: np.ndarray, tol: Optional[float] = None, max_iters: Optional[int] = None) -> EigenResult:
    S = check_symmetric(S, "S")
    n = S.shape[0]
    tol = settings.eigen_tol if tol is None else tol
    if max_iters is None:
        max_iters = settings.eigen_max_iters_factor * n + 1000

    bound = row_sum_bound(S)
    if bound == 0.0:
        return EigenResult(value=0.0, vector=start_vector(n), iterations=0, residual=0.0)

    result = power_iterate(lambda x: S @ x, n, -bound, tol, max_iters, scale=bound)
    logger.debug(f"top_eigen: n={n} value={result.value:.6g} iterations={result.iterations}")
    return result


def reference_v1(spec: "MixtureSpec") -> np.ndarray:
    """Leading unit eigenvector of the reference matrix R"""
    w1, w2 = spec.weights
    v = np.concatenate([np.full(spec.n1, w2), np.full(spec.n2, -w1)])
    return v / np.sqrt(w1 * w2 * spec.n)


def sign_split(v: np.ndarray) -> np.ndarray:
    """Componentwise sign, zeros go to +1"""
    v = np.asarray(v, dtype=float)
    return np.where(v >= 0, 1, -1).astype(int)


def split_costs(
    v: np.ndarray,
    Y: Optional[np.ndarray] = None,
    gram: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted order of v (descending) and the k-means cost of each contiguous split.

    costs[j - 1] is the total within-group sum of squares when the first j
    sorted rows form one group and the rest the other, j = 1..n-1.
    """
    v = np.asarray(v, dtype=float)
    if gram is None:
        if Y is None:
            raise ValueError("Either Y or gram is required")
        Y = np.asarray(Y, dtype=float)
        if Y.shape[0] != v.shape[0]:
            raise DimensionMismatchError(f"v has {v.shape[0]} entries but Y has {Y.shape[0]} rows")
        gram = Y @ Y.T
    gram = np.asarray(gram, dtype=float)
    n = v.shape[0]
    if gram.shape != (n, n):
        raise DimensionMismatchError(f"gram shape {gram.shape} does not match n={n}")

    order = np.argsort(-v, kind="stable")
    sorted_gram = gram[np.ix_(order, order)]
    cumulative = sorted_gram.cumsum(axis=0).cumsum(axis=1)
    total_sq = float(np.trace(sorted_gram))
    total = cumulative[-1, -1]

    j = np.arange(1, n)
    left = cumulative[j - 1, j - 1]
    cross = cumulative[j - 1, n - 1] - left
    right = total - left - 2.0 * cross
    costs = total_sq - left / j - right / (n - j)
    return order, costs


def peng_wei_split(
    v: np.ndarray,
    Y: Optional[np.ndarray] = None,
    gram: Optional[np.ndarray] = None,
) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    if not np.any(v):
        raise ValueError("v must be nonzero")
    if n < 2:
        return np.ones(n, dtype=int)

    order, costs = split_costs(v, Y=Y, gram=gram)
    floor = float(costs.min())
    slack = 1e-12 * max(1.0, abs(floor), float(np.max(np.abs(costs))))
    split = int(np.flatnonzero(costs <= floor + slack)[0]) + 1
    threshold = v[order[split - 1]]
    logger.debug(f"peng_wei_split: split index {split} of {n - 1}, cost {costs[split - 1]:.6g}")
    return np.where(v >= threshold, 1, -1).astype(int)


def z1_projector(Z: np.ndarray) -> np.ndarray:
    """Z1 = (I - P1) Z (I - P1) for Z with Z 1 = 1"""
    Z = check_symmetric(Z, "Z")
    n = Z.shape[0]
    if np.max(np.abs(Z.sum(axis=1) - 1.0)) > 1e-8:
        raise ValueError("Z must satisfy Z 1_n = 1_n")
    row_means = Z.mean(axis=1, keepdims=True)
    col_means = Z.mean(axis=0, keepdims=True)
    Z1 = Z - row_means - col_means + Z.mean()
    return (Z1 + Z1.T) / 2.0 if n else Z1
