from typing import Optional, Tuple, Union
from dataclasses import dataclass
import logging
import math

import numpy as np

from ..app.config import settings
from ..app.errors import DegenerateSpectrumError, DimensionMismatchError
from .mixture_model import Dataset, separation, snr
from .sdp_solver import SdpSolution, round_signs
from .spectral import EigenResult, operator_norm, reference_v1

logger = logging.getLogger(__name__)

Z_BLOCK_ROWS = 256
Z_OP_TOL = 1e-6


@dataclass
class TrialMetrics:
    algorithm: str
    n: int
    p: int
    success_rate: float
    snr: float
    np_gamma_sq: float
    theta_sdp: Optional[float] = None
    theta_1: Optional[float] = None
    phi: Optional[float] = None
    sin_theta_sdp: Optional[float] = None
    sin_theta_1: Optional[float] = None
    z_l1: Optional[float] = None
    z_frob: Optional[float] = None
    z_op: Optional[float] = None
    aligned_l2: Optional[float] = None
    svd_l2: Optional[float] = None
    objective: Optional[float] = None
    converged: Optional[bool] = None

    @property
    def misclassification_rate(self) -> float:
        return 1.0 - self.success_rate

    @property
    def theta(self) -> Optional[float]:
        """The algorithm's own estimator angle"""
        return self.theta_sdp if self.theta_sdp is not None else self.theta_1

    @property
    def sin_theta(self) -> Optional[float]:
        return self.sin_theta_sdp if self.sin_theta_sdp is not None else self.sin_theta_1


def _as_vector(u, name: str) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise DimensionMismatchError(f"{name} must be a vector, got shape {u.shape}")
    return u


def _check_lengths(u: np.ndarray, v: np.ndarray):
    if u.shape != v.shape:
        raise DimensionMismatchError(f"Length mismatch: {u.shape[0]} vs {v.shape[0]}")


def success_rate(pred, truth) -> float:
    pred, truth = _as_vector(pred, "pred"), _as_vector(truth, "truth")
    _check_lengths(pred, truth)
    n = pred.shape[0]
    if n == 0:
        raise DimensionMismatchError("Partitions must be nonempty")
    matches = int(np.sum(pred == truth))
    return max(matches, n - matches) / n


def misclassification_rate(pred, truth) -> float:
    return 1.0 - success_rate(pred, truth)


def angle_rad(u, v) -> float:
    u, v = _as_vector(u, "u"), _as_vector(v, "v")
    _check_lengths(u, v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("Angle undefined for a zero vector")
    u, v = u / nu, v / nv
    cosine = float(u @ v)
    # atan2 keeps full precision near 0 and pi where acos does not
    return math.atan2(float(np.linalg.norm(u - cosine * v)), cosine)


def angle_deg(u, v) -> float:
    return math.degrees(angle_rad(u, v))


def aligned_angle_deg(u, v) -> float:
    """Angle between the lines spanned by u and v, in [0, 90]"""
    angle = angle_deg(u, v)
    return min(angle, 180.0 - angle)


def aligned_l2(u, v) -> float:
    u, v = _as_vector(u, "u"), _as_vector(v, "v")
    _check_lengths(u, v)
    return float(min(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def z_distances(
    sol_or_factor: Union[SdpSolution, np.ndarray],
    truth,
    tol: Optional[float] = None,
) -> Tuple[float, float, float]:
    """(||Z - xx^T||_1 / n^2, ||Z - xx^T||_F / n, ||Z - xx^T||_2 / n) with Z = VV^T.

    Z is materialized one row block at a time and never stored whole.
    """
    V = sol_or_factor.factor if isinstance(sol_or_factor, SdpSolution) else np.asarray(sol_or_factor, dtype=float)
    x = _as_vector(truth, "truth")
    n = V.shape[0]
    if x.shape[0] != n:
        raise DimensionMismatchError(f"Factor has {n} rows, truth has {x.shape[0]} entries")

    l1 = 0.0
    frob_sq = 0.0
    for start in range(0, n, Z_BLOCK_ROWS):
        stop = min(start + Z_BLOCK_ROWS, n)
        block = V[start:stop] @ V.T - np.outer(x[start:stop], x)
        l1 += float(np.abs(block).sum())
        frob_sq += float(np.square(block).sum())

    op = operator_norm(
        lambda y: V @ (V.T @ y) - x * (x @ y),
        n,
        float(n),
        tol if tol is not None else Z_OP_TOL,
        settings.eigen_max_iters_factor * n + 1000,
    )
    return l1 / n ** 2, math.sqrt(frob_sq) / n, op / n


def svd_l2_bound(xi: float, w1: float, w2: float) -> float:
    """Upper bound 8 xi^2 / (w1 w2)^2 on min_alpha ||alpha v1 - v1_bar||^2"""
    return 8.0 * xi ** 2 / (w1 * w2) ** 2


def _signal_terms(dataset: Dataset) -> Tuple[float, float]:
    spec = dataset.spec
    _, gamma = separation(spec)
    return snr(spec), spec.n * spec.p * gamma ** 2


def sdp_trial_metrics(
    dataset: Dataset,
    sol: SdpSolution,
    v1: Optional[np.ndarray] = None,
    with_z: bool = True,
) -> TrialMetrics:
    """Metrics of one SDP run; `v1` (leading eigenvector of YY^T) adds the angle phi"""
    if sol.xhat is None:
        raise DegenerateSpectrumError("SDP solution has no leading eigenvector to round")
    spec = dataset.spec
    truth = dataset.membership.astype(float)
    partition = round_signs(sol.xhat)
    theta = aligned_angle_deg(sol.xhat, truth)
    snr_value, np_gamma_sq = _signal_terms(dataset)

    metrics = TrialMetrics(
        algorithm="sdp",
        n=spec.n,
        p=spec.p,
        success_rate=success_rate(partition, dataset.membership),
        snr=snr_value,
        np_gamma_sq=np_gamma_sq,
        theta_sdp=theta,
        sin_theta_sdp=math.sin(math.radians(theta)),
        aligned_l2=aligned_l2(sol.xhat, truth) / math.sqrt(spec.n),
        objective=sol.objective,
        converged=sol.converged,
    )
    if with_z:
        metrics.z_l1, metrics.z_frob, metrics.z_op = z_distances(sol, truth)
    if v1 is not None:
        metrics.phi = aligned_angle_deg(sol.xhat, v1)
    return metrics


def spectral_trial_metrics(
    dataset: Dataset,
    eigen: EigenResult,
    partition: np.ndarray,
    algorithm: str,
) -> TrialMetrics:
    spec = dataset.spec
    v1_bar = reference_v1(spec)
    theta = aligned_angle_deg(eigen.vector, v1_bar)
    snr_value, np_gamma_sq = _signal_terms(dataset)
    return TrialMetrics(
        algorithm=algorithm,
        n=spec.n,
        p=spec.p,
        success_rate=success_rate(partition, dataset.membership),
        snr=snr_value,
        np_gamma_sq=np_gamma_sq,
        theta_1=theta,
        sin_theta_1=math.sin(math.radians(theta)),
        svd_l2=aligned_l2(eigen.vector, v1_bar) ** 2,
    )
