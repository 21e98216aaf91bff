from typing import Any, Dict, Optional, Tuple
from dataclasses import dataclass, field
from enum import Enum
import hashlib
import json
import logging
import math

import numpy as np

from ..app.errors import InvalidSpecError, NonConvergenceError
from .spectral import power_iterate

logger = logging.getLogger(__name__)


class NoiseKind(Enum):
    BERNOULLI = "bernoulli"
    ISOTROPIC = "isotropic"
    DIAGONAL = "diagonal"
    GENERAL = "general"


@dataclass(frozen=True, eq=False)
class NoiseModel:
    kind: NoiseKind
    sigma1: Optional[np.ndarray] = None
    sigma2: Optional[np.ndarray] = None
    H1: Optional[np.ndarray] = None
    H2: Optional[np.ndarray] = None

    @classmethod
    def bernoulli(cls) -> "NoiseModel":
        return cls(kind=NoiseKind.BERNOULLI)

    @classmethod
    def isotropic(cls) -> "NoiseModel":
        return cls(kind=NoiseKind.ISOTROPIC)

    @classmethod
    def diagonal(cls, sigma1, sigma2) -> "NoiseModel":
        return cls(
            kind=NoiseKind.DIAGONAL,
            sigma1=np.asarray(sigma1, dtype=float),
            sigma2=np.asarray(sigma2, dtype=float),
        )

    @classmethod
    def general(cls, H1, H2) -> "NoiseModel":
        return cls(kind=NoiseKind.GENERAL, H1=np.asarray(H1, dtype=float), H2=np.asarray(H2, dtype=float))

    @property
    def is_anisotropic(self) -> bool:
        return self.kind in (NoiseKind.DIAGONAL, NoiseKind.GENERAL)


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    n: int
    p: int
    w1: float
    mu1: np.ndarray
    mu2: np.ndarray
    noise: NoiseModel = field(default_factory=NoiseModel.isotropic)
    subgaussian_bound: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mu1", np.asarray(self.mu1, dtype=float))
        object.__setattr__(self, "mu2", np.asarray(self.mu2, dtype=float))
        self.validate()

    @property
    def n1(self) -> int:
        # ties round up
        return int(math.floor(self.n * self.w1 + 0.5))

    @property
    def n2(self) -> int:
        return self.n - self.n1

    @property
    def weights(self) -> Tuple[float, float]:
        """Realized cluster proportions (n1/n, n2/n)"""
        return self.n1 / self.n, self.n2 / self.n

    @property
    def w_min(self) -> float:
        return min(self.weights)

    @property
    def membership(self) -> np.ndarray:
        return np.concatenate([np.ones(self.n1, dtype=int), -np.ones(self.n2, dtype=int)])

    def validate(self):
        if self.n < 2 or self.p < 1:
            raise InvalidSpecError(f"Need n >= 2 and p >= 1, got n={self.n}, p={self.p}")
        if not 0.0 < self.w1 < 1.0:
            raise InvalidSpecError(f"w1 must lie in (0, 1), got {self.w1}")
        if self.n1 < 1 or self.n2 < 1:
            raise InvalidSpecError(f"Cluster sizes must be positive, got n1={self.n1}, n2={self.n2}")
        if self.mu1.shape != (self.p,) or self.mu2.shape != (self.p,):
            raise InvalidSpecError(f"Mean vectors must have length p={self.p}")
        if self.subgaussian_bound < 0:
            raise InvalidSpecError("subgaussian_bound must be nonnegative")

        noise = self.noise
        if noise.kind == NoiseKind.BERNOULLI:
            for mu in (self.mu1, self.mu2):
                if np.any(mu <= 0.0) or np.any(mu >= 1.0):
                    raise InvalidSpecError("Bernoulli means must lie strictly inside (0, 1)")
        elif noise.kind == NoiseKind.DIAGONAL:
            for sigma in (noise.sigma1, noise.sigma2):
                if sigma is None or sigma.shape != (self.p,):
                    raise InvalidSpecError(f"Diagonal factors must be vectors of length p={self.p}")
                if np.any(sigma < 0):
                    raise InvalidSpecError("Diagonal factors must be nonnegative")
        elif noise.kind == NoiseKind.GENERAL:
            for H in (noise.H1, noise.H2):
                if H is None or H.ndim != 2 or H.shape[0] != self.p:
                    raise InvalidSpecError(f"Factor matrices must have p={self.p} rows")
                if H.shape[1] < self.p:
                    raise InvalidSpecError("Factor matrices need m >= p columns")
                norm = np.linalg.norm(H, 2)
                if not 0.0 < norm < np.inf:
                    raise InvalidSpecError("Factor matrices need 0 < ||H||_2 < inf")
            if noise.H1.shape != noise.H2.shape:
                raise InvalidSpecError("H1 and H2 must share the same shape")

    def cluster_mean(self, row: int) -> np.ndarray:
        return self.mu1 if row < self.n1 else self.mu2


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    membership: np.ndarray
    spec: MixtureSpec
    seed: int


def _mirrored_means(alpha: float, eps: float, p: int) -> Tuple[np.ndarray, np.ndarray]:
    high = (1.0 + alpha) / 2.0 + eps / 2.0
    low = (1.0 - alpha) / 2.0 + eps / 2.0
    first_half = (p + 1) // 2
    mu1 = np.concatenate([np.full(first_half, high), np.full(p - first_half, low)])
    mu2 = np.concatenate([np.full(first_half, low), np.full(p - first_half, high)])
    return mu1, mu2


def make_bernoulli_spec(alpha: float, eps: float, p: int, n: int, w1: float = 0.5) -> MixtureSpec:
    if not 0.0 <= alpha < 1.0:
        raise InvalidSpecError(f"alpha must lie in [0, 1), got {alpha}")
    high = (1.0 + alpha) / 2.0 + eps / 2.0
    low = (1.0 - alpha) / 2.0 + eps / 2.0
    if not (high < 1.0 and low > 0.0):
        raise InvalidSpecError(f"Bernoulli means {low:.4g}, {high:.4g} fall outside (0, 1)")
    if p % 2:
        logger.debug(f"Odd p={p}: splitting features {(p + 1) // 2}/{p // 2}")
    mu1, mu2 = _mirrored_means(alpha, eps, p)
    return MixtureSpec(n=n, p=p, w1=w1, mu1=mu1, mu2=mu2, noise=NoiseModel.bernoulli())


def make_gaussian_spec(
    alpha: float,
    eps: float,
    p: int,
    n: int,
    w1: float = 0.5,
    sigma1: float = 1.0,
    sigma2: float = 1.0,
) -> MixtureSpec:
    mu1, mu2 = _mirrored_means(alpha, eps, p)
    if sigma1 == 1.0 and sigma2 == 1.0:
        noise = NoiseModel.isotropic()
    else:
        noise = NoiseModel.diagonal(np.full(p, float(sigma1)), np.full(p, float(sigma2)))
    return MixtureSpec(n=n, p=p, w1=w1, mu1=mu1, mu2=mu2, noise=noise)


def derive_seed(master_seed: int, *key: int) -> int:
    """Stable 63-bit seed for a (master_seed, key...) cell; independent of other keys"""
    sequence = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def row_generator(seed: int, row: int) -> np.random.Generator:
    """Counter-based stream for one row, independent of scheduling"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), row])))


def sample_row(spec: MixtureSpec, seed: int, row: int) -> np.ndarray:
    rng = row_generator(seed, row)
    mean = spec.cluster_mean(row)
    noise = spec.noise
    first = row < spec.n1

    if noise.kind == NoiseKind.BERNOULLI:
        return (rng.random(spec.p) < mean).astype(float)
    if noise.kind == NoiseKind.ISOTROPIC:
        return mean + rng.standard_normal(spec.p)
    if noise.kind == NoiseKind.DIAGONAL:
        sigma = noise.sigma1 if first else noise.sigma2
        return mean + sigma * rng.standard_normal(spec.p)
    H = noise.H1 if first else noise.H2
    return mean + H @ rng.standard_normal(H.shape[1])


def sample(spec: MixtureSpec, seed: int) -> Dataset:
    X = np.empty((spec.n, spec.p), dtype=float)
    for row in range(spec.n):
        X[row] = sample_row(spec, seed, row)
    X.flags.writeable = False
    membership = spec.membership
    membership.flags.writeable = False
    return Dataset(X=X, membership=membership, spec=spec, seed=int(seed))


def separation(spec: MixtureSpec) -> Tuple[float, float]:
    diff = spec.mu1 - spec.mu2
    delta_sq = float(diff @ diff)
    return delta_sq, delta_sq / spec.p


def variance_profiles(spec: MixtureSpec) -> Tuple[float, float]:
    noise = spec.noise
    if noise.kind == NoiseKind.BERNOULLI:
        return (
            float(np.sum(spec.mu1 * (1.0 - spec.mu1))),
            float(np.sum(spec.mu2 * (1.0 - spec.mu2))),
        )
    if noise.kind == NoiseKind.ISOTROPIC:
        return float(spec.p), float(spec.p)
    if noise.kind == NoiseKind.DIAGONAL:
        return float(noise.sigma1 @ noise.sigma1), float(noise.sigma2 @ noise.sigma2)
    return float(np.sum(noise.H1 ** 2)), float(np.sum(noise.H2 ** 2))


def _factor_cov_norm(H: np.ndarray, tol: float) -> float:
    """||H H^T||_2 by power iteration on the PSD operator H H^T"""
    p = H.shape[0]
    result = power_iterate(
        lambda x: H @ (H.T @ x), p, 0.0, tol, 10 * p + 1000, scale=float(np.sum(H ** 2))
    )
    return result.value


def covariance_norms(spec: MixtureSpec, tol: float = 1e-10) -> Tuple[float, float]:
    noise = spec.noise
    if noise.kind == NoiseKind.BERNOULLI:
        return (
            float(np.max(spec.mu1 * (1.0 - spec.mu1))),
            float(np.max(spec.mu2 * (1.0 - spec.mu2))),
        )
    if noise.kind == NoiseKind.ISOTROPIC:
        return 1.0, 1.0
    if noise.kind == NoiseKind.DIAGONAL:
        return float(np.max(noise.sigma1 ** 2)), float(np.max(noise.sigma2 ** 2))
    return _factor_cov_norm(noise.H1, tol), _factor_cov_norm(noise.H2, tol)


def snr(spec: MixtureSpec) -> float:
    c0 = spec.subgaussian_bound
    if c0 <= 0:
        raise InvalidSpecError("snr requires subgaussian_bound > 0")
    delta_sq, gamma = separation(spec)
    if delta_sq == 0.0:
        return 0.0
    signal = spec.n * spec.p * gamma ** 2

    if not spec.noise.is_anisotropic:
        return min(delta_sq / c0 ** 2, signal / c0 ** 4)

    try:
        cov_norm = max(covariance_norms(spec))
    except NonConvergenceError:
        logger.error(f"Covariance operator norm did not converge for p={spec.p}")
        raise
    if cov_norm == 0.0:
        return math.inf
    return min(delta_sq / (c0 ** 2 * cov_norm), signal / (c0 ** 4 * cov_norm ** 2))


def variance_discrepancy_xi(spec: MixtureSpec) -> float:
    """Smallest xi with |V1 - V2| <= xi n p gamma / 3 that also keeps the bias bound valid"""
    v1, v2 = variance_profiles(spec)
    _, gamma = separation(spec)
    floor = max(4.0, 1.0 / spec.w_min) / (2.0 * spec.n)
    signal = spec.n * spec.p * gamma
    if signal == 0.0:
        return math.inf if v1 != v2 else floor
    return max(3.0 * abs(v1 - v2) / signal, floor)


def spec_to_config(spec: MixtureSpec) -> Dict[str, Any]:
    noise = spec.noise
    config: Dict[str, Any] = {
        "model": noise.kind.value,
        "n": spec.n,
        "p": spec.p,
        "w1": spec.w1,
        "mu1": spec.mu1.tolist(),
        "mu2": spec.mu2.tolist(),
        "subgaussian_bound": spec.subgaussian_bound,
    }
    if noise.kind == NoiseKind.DIAGONAL:
        config["sigma1"] = noise.sigma1.tolist()
        config["sigma2"] = noise.sigma2.tolist()
    elif noise.kind == NoiseKind.GENERAL:
        config["m"] = int(noise.H1.shape[1])
        config["H1"] = noise.H1.ravel().tolist()
        config["H2"] = noise.H2.ravel().tolist()
    return config


def _as_sigma(value: Any, p: int) -> np.ndarray:
    sigma = np.asarray(value, dtype=float)
    return np.full(p, float(sigma)) if sigma.ndim == 0 else sigma


def spec_from_config(config: Dict[str, Any]) -> MixtureSpec:
    """Build a spec from flat keys; alpha/eps build the mirrored means when mu1/mu2 are absent"""
    try:
        kind = NoiseKind(config.get("model", NoiseKind.BERNOULLI.value))
        n = int(config["n"])
        p = int(config["p"])
    except (KeyError, ValueError) as e:
        raise InvalidSpecError(f"Invalid mixture config: {e}") from e

    w1 = float(config.get("w1", 0.5))
    alpha = float(config.get("alpha", 0.04))
    eps = float(config.get("eps", 0.1 * alpha))

    if kind == NoiseKind.BERNOULLI and "mu1" not in config:
        spec = make_bernoulli_spec(alpha, eps, p, n, w1)
        c0 = config.get("subgaussian_bound")
        if c0 is None:
            return spec
        return MixtureSpec(n=n, p=p, w1=w1, mu1=spec.mu1, mu2=spec.mu2, noise=spec.noise, subgaussian_bound=float(c0))

    if "mu1" in config:
        mu1 = np.asarray(config["mu1"], dtype=float)
        mu2 = np.asarray(config["mu2"], dtype=float)
    else:
        mu1, mu2 = _mirrored_means(alpha, eps, p)

    if kind == NoiseKind.BERNOULLI:
        noise = NoiseModel.bernoulli()
    elif kind == NoiseKind.ISOTROPIC:
        noise = NoiseModel.isotropic()
    elif kind == NoiseKind.DIAGONAL:
        noise = NoiseModel.diagonal(
            _as_sigma(config.get("sigma1", 1.0), p),
            _as_sigma(config.get("sigma2", 1.0), p),
        )
    else:
        m = int(config.get("m", p))
        noise = NoiseModel.general(
            np.asarray(config["H1"], dtype=float).reshape(p, m),
            np.asarray(config["H2"], dtype=float).reshape(p, m),
        )

    return MixtureSpec(
        n=n,
        p=p,
        w1=w1,
        mu1=mu1,
        mu2=mu2,
        noise=noise,
        subgaussian_bound=float(config.get("subgaussian_bound", 1.0)),
    )


def fingerprint(spec: MixtureSpec) -> str:
    payload = json.dumps(spec_to_config(spec), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:12]
