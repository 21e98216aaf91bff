from typing import List, Optional, Tuple
from dataclasses import dataclass, field
import logging
import math

import numpy as np
from pydantic import BaseModel, Field

from ..app.config import settings
from ..app.errors import DegenerateSpectrumError, DimensionMismatchError
from .preprocessing import CenteredData
from .spectral import check_symmetric, fix_sign, operator_norm, row_sum_bound, sign_split

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
MAX_BACKTRACKS = 40
STABLE_ITERATIONS = 5
MAX_RANK = 32
NORM_TOL = 1e-4


class SolverOptions(BaseModel):
    rank: Optional[int] = Field(default=None, ge=2, description="Factor width; None picks default_rank(n)")
    tol: float = Field(default=1e-7, gt=0)
    max_iters: int = Field(default=2000, ge=1)
    restarts: int = Field(default=3, ge=1)
    seed: int = Field(default=0, ge=0)

    @classmethod
    def from_settings(cls) -> "SolverOptions":
        return cls(
            rank=settings.sdp_rank or None,
            tol=settings.sdp_tol,
            max_iters=settings.sdp_max_iters,
            restarts=settings.sdp_restarts,
            seed=settings.sdp_seed,
        )


@dataclass
class SdpSolution:
    factor: np.ndarray
    objective: float
    iterations: int
    converged: bool
    xhat: Optional[np.ndarray] = None
    restart_objectives: List[float] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.factor.shape[0]

    def Z(self) -> np.ndarray:
        if self.n > settings.dense_z_limit:
            raise DimensionMismatchError(
                f"Refusing to materialize a dense Z of order {self.n} (limit {settings.dense_z_limit})"
            )
        return self.factor @ self.factor.T


def default_rank(n: int) -> int:
    return max(2, min(int(math.ceil(math.sqrt(2 * n))) + 1, MAX_RANK))


def sdp2_matrix(cd: CenteredData) -> np.ndarray:
    """YY^T - lambda E_n; same maximizers as A over unit-diagonal PSD matrices"""
    return cd.gram - cd.lam * np.ones((cd.n, cd.n))


def _normalize_rows(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return V / norms


def _random_factor(n: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    return _normalize_rows(rng.standard_normal((n, rank)))


def _norm_estimate(A: np.ndarray) -> float:
    n = A.shape[0]
    estimate = operator_norm(
        lambda x: A @ x, n, row_sum_bound(A), NORM_TOL, settings.eigen_max_iters_factor * n + 1000
    )
    return max(estimate, float(np.max(np.abs(A))))


def _ascend(
    A: np.ndarray,
    V: np.ndarray,
    tol: float,
    max_iters: int,
    step0: float,
) -> Tuple[np.ndarray, float, int, bool]:
    """Riemannian ascent on the product of spheres with Armijo backtracking"""
    AV = A @ V
    objective = float(np.sum(V * AV))
    floor = 1e-12 * step0 ** -1 * V.shape[0]
    step = step0
    stable = 0

    for iteration in range(1, max_iters + 1):
        G = 2.0 * AV
        grad = G - np.sum(G * V, axis=1, keepdims=True) * V
        grad_sq = float(np.sum(grad * grad))
        if grad_sq == 0.0:
            return V, objective, iteration, True

        accepted = False
        trial = step
        for _ in range(MAX_BACKTRACKS):
            V_new = _normalize_rows(V + trial * grad)
            AV_new = A @ V_new
            candidate = float(np.sum(V_new * AV_new))
            if candidate >= objective + ARMIJO * trial * grad_sq:
                accepted = True
                break
            trial /= 2.0
        if not accepted:
            return V, objective, iteration, True

        change = abs(candidate - objective) / max(abs(objective), abs(candidate), floor)
        V, AV, objective = V_new, AV_new, candidate
        step = min(2.0 * trial, 8.0 * step0)

        stable = stable + 1 if change < tol else 0
        if stable >= STABLE_ITERATIONS:
            return V, objective, iteration, True

    return V, objective, max_iters, False


def leading_eigvec(sol_or_factor) -> np.ndarray:
    V = sol_or_factor.factor if isinstance(sol_or_factor, SdpSolution) else np.asarray(sol_or_factor, dtype=float)
    n = V.shape[0]
    if not np.any(V):
        raise ValueError("Factor must be nonzero")

    values, vectors = np.linalg.eigh(V.T @ V)
    top = values[-1]
    second = values[-2] if values.shape[0] > 1 else 0.0
    if top - second < 1e-12 * top:
        raise DegenerateSpectrumError(f"Top eigenvalue of Z is numerically multiple ({top:.6g}, {second:.6g})")

    x = V @ vectors[:, -1]
    x *= math.sqrt(n) / np.linalg.norm(x)
    return fix_sign(x)


def round_signs(x: np.ndarray) -> np.ndarray:
    return sign_split(x)


def solve(A: np.ndarray, opts: Optional[SolverOptions] = None) -> SdpSolution:
    opts = opts or SolverOptions.from_settings()
    A = check_symmetric(A, "A")
    n = A.shape[0]
    if n < 1:
        raise DimensionMismatchError("A must have at least one row")
    rank = opts.rank or default_rank(n)

    seed_sequence = np.random.SeedSequence(opts.seed)
    generators = [np.random.default_rng(child) for child in seed_sequence.spawn(opts.restarts)]

    if not np.any(A):
        V = _random_factor(n, rank, generators[0])
        logger.debug(f"solve: zero objective matrix, n={n}")
        return SdpSolution(factor=V, objective=0.0, iterations=0, converged=True,
                           xhat=_safe_xhat(V), restart_objectives=[0.0])

    step0 = 1.0 / _norm_estimate(A)
    best: Optional[Tuple[np.ndarray, float, int, bool]] = None
    objectives = []
    for restart, rng in enumerate(generators):
        V0 = _random_factor(n, rank, rng)
        V, objective, iterations, converged = _ascend(A, V0, opts.tol, opts.max_iters, step0)
        objectives.append(objective)
        logger.debug(
            f"solve: restart {restart} objective={objective:.10g} "
            f"iterations={iterations} converged={converged}"
        )
        if best is None or objective > best[1]:
            best = (V, objective, iterations, converged)

    V, objective, iterations, converged = best
    if not converged:
        logger.warning(f"SDP ascent hit max_iters={opts.max_iters} at n={n}; returning best iterate")

    return SdpSolution(
        factor=V,
        objective=objective,
        iterations=iterations,
        converged=converged,
        xhat=_safe_xhat(V),
        restart_objectives=objectives,
    )


def _safe_xhat(V: np.ndarray) -> Optional[np.ndarray]:
    try:
        return leading_eigvec(V)
    except DegenerateSpectrumError as e:
        logger.warning(f"No leading eigenvector for the SDP solution: {e}")
        return None


def hyperplane_round(
    sol: SdpSolution,
    A: np.ndarray,
    seed: int = 0,
    trials: int = 50,
) -> Tuple[np.ndarray, float]:
    """Random-hyperplane rounding of the factor; keeps the best x^T A x"""
    rng = np.random.default_rng(seed)
    best_x, best_value = None, -np.inf
    for _ in range(trials):
        g = rng.standard_normal(sol.factor.shape[1])
        x = sign_split(sol.factor @ g)
        value = float(x @ A @ x)
        if value > best_value:
            best_x, best_value = x, value
    return best_x, best_value
