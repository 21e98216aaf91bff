from typing import Tuple
from dataclasses import dataclass
import logging

import numpy as np

from ..app.errors import DimensionMismatchError, InvalidSpecError
from .mixture_model import MixtureSpec, separation, variance_profiles

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CenteredData:
    Y: np.ndarray
    gram: np.ndarray
    lam: float
    tau: float

    @property
    def n(self) -> int:
        return self.Y.shape[0]


@dataclass(frozen=True, eq=False)
class BiasDecomposition:
    W0: np.ndarray
    W_mixed: np.ndarray
    trace_term: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.W0 - self.W_mixed - self.trace_term


def symmetrize(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2.0


def gram_matrix(Y: np.ndarray) -> np.ndarray:
    return symmetrize(Y @ Y.T)


def center(X: np.ndarray) -> CenteredData:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatchError(f"X must be a matrix, got shape {X.shape}")
    n = X.shape[0]
    if n < 2:
        raise InvalidSpecError(f"Centering needs n >= 2 rows, got {n}")

    Y = X - X.mean(axis=0, keepdims=True)
    gram = gram_matrix(Y)
    trace = float(np.trace(gram))
    tau = trace / n
    lam = (float(gram.sum()) - trace) / (n * (n - 1))
    return CenteredData(Y=Y, gram=gram, lam=lam, tau=tau)


def build_A(cd: CenteredData) -> np.ndarray:
    n = cd.n
    A = cd.gram - cd.lam * np.ones((n, n))
    A[np.diag_indices(n)] += cd.lam
    return A


def _block_matrix(spec: MixtureSpec, a: float, b: float, c: float) -> np.ndarray:
    """[[a E_n1, b E_n1xn2], [b E_n2xn1, c E_n2]]"""
    n1 = spec.n1
    M = np.empty((spec.n, spec.n))
    M[:n1, :n1] = a
    M[:n1, n1:] = b
    M[n1:, :n1] = b
    M[n1:, n1:] = c
    return M


def reference_R(spec: MixtureSpec) -> np.ndarray:
    w1, w2 = spec.weights
    delta_sq, _ = separation(spec)
    return delta_sq * _block_matrix(spec, w2 * w2, -w1 * w2, w1 * w1)


def covariance_Y(spec: MixtureSpec) -> np.ndarray:
    """Sigma_Y = E YY^T - R"""
    n, n1 = spec.n, spec.n1
    w1, w2 = spec.weights
    v1, v2 = variance_profiles(spec)

    sigma = -((w2 * v1 + w1 * v2) / n) * np.ones((n, n))
    sigma -= ((v1 - v2) / n) * _block_matrix(spec, 1.0, 0.0, -1.0)
    diagonal = np.concatenate([np.full(n1, v1), np.full(n - n1, v2)])
    sigma[np.diag_indices(n)] += diagonal
    return sigma


def expected_gram(spec: MixtureSpec) -> np.ndarray:
    return covariance_Y(spec) + reference_R(spec)


def expected_tau(spec: MixtureSpec) -> float:
    n = spec.n
    w1, w2 = spec.weights
    v1, v2 = variance_profiles(spec)
    trace_R = float(np.trace(reference_R(spec)))
    return ((n - 1) * (w1 * v1 + w2 * v2) + trace_R) / n


def expected_lambda(spec: MixtureSpec) -> float:
    return -expected_tau(spec) / (spec.n - 1)


def oracle_B(cd: CenteredData, spec: MixtureSpec) -> np.ndarray:
    if cd.n != spec.n:
        raise DimensionMismatchError(f"Centered data has n={cd.n}, spec has n={spec.n}")
    B = build_A(cd)
    B[np.diag_indices(cd.n)] -= expected_tau(spec)
    return B


def bias_components(spec: MixtureSpec) -> BiasDecomposition:
    n, n1 = spec.n, spec.n1
    w1, w2 = spec.weights
    v1, v2 = variance_profiles(spec)
    gap = v1 - v2

    W0 = np.diag(np.concatenate([np.full(n1, gap * w2), np.full(n - n1, -gap * w1)]))
    W_mixed = (gap / n) * _block_matrix(spec, 2.0 * w2, w2 - w1, -2.0 * w1)
    trace_R = float(np.trace(reference_R(spec)))
    trace_term = (trace_R / (n - 1)) * (np.eye(n) - np.ones((n, n)) / n)
    return BiasDecomposition(W0=W0, W_mixed=W_mixed, trace_term=trace_term)


def expected_bias(spec: MixtureSpec) -> np.ndarray:
    """E B - R in closed form"""
    return bias_components(spec).total


def expected_bias_direct(spec: MixtureSpec) -> np.ndarray:
    """E B - R assembled from E YY^T, E lambda and E tau"""
    n = spec.n
    EB = expected_gram(spec) - expected_lambda(spec) * (np.ones((n, n)) - np.eye(n))
    EB[np.diag_indices(n)] -= expected_tau(spec)
    return EB - reference_R(spec)


def projector_identity(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(YY^T, (I - P1) XX^T (I - P1)) computed independently"""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    projector = np.eye(n) - np.ones((n, n)) / n
    return center(X).gram, projector @ (X @ X.T) @ projector
