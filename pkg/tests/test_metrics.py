"""
Success rates, angles and distances between the SDP solution and the true partition
"""

import math

import numpy as np
import pytest

from sdpcut.app.errors import DegenerateSpectrumError, DimensionMismatchError
from sdpcut.services.metrics import (
    TrialMetrics,
    aligned_angle_deg,
    aligned_l2,
    angle_deg,
    angle_rad,
    misclassification_rate,
    sdp_trial_metrics,
    spectral_trial_metrics,
    success_rate,
    svd_l2_bound,
    z_distances,
)
from sdpcut.services.mixture_model import sample
from sdpcut.services.preprocessing import build_A, center, reference_R
from sdpcut.services.sdp_solver import SdpSolution, SolverOptions, solve
from sdpcut.services.spectral import reference_v1, sign_split, top_eigen


def test_success_rate_ignores_global_flip():
    truth = np.array([1, 1, -1, -1])
    assert success_rate(truth, truth) == 1.0
    assert success_rate(-truth, truth) == 1.0
    assert success_rate(np.array([1, -1, -1, -1]), truth) == 0.75
    assert misclassification_rate(np.array([1, -1, -1, -1]), truth) == pytest.approx(0.25)


def test_success_rate_is_at_least_half(rng):
    truth = np.where(rng.random(31) < 0.5, 1, -1)
    for _ in range(20):
        pred = np.where(rng.random(31) < 0.5, 1, -1)
        assert 0.5 <= success_rate(pred, truth) <= 1.0


def test_success_rate_validates_lengths():
    with pytest.raises(DimensionMismatchError):
        success_rate(np.ones(3), np.ones(4))
    with pytest.raises(DimensionMismatchError):
        success_rate(np.ones(0), np.ones(0))


def test_angles():
    u = np.array([1.0, 0.0])
    assert angle_deg(u, np.array([0.0, 2.0])) == pytest.approx(90.0)
    assert angle_deg(u, -u) == pytest.approx(180.0)
    assert aligned_angle_deg(u, -u) == pytest.approx(0.0)
    assert aligned_angle_deg(u, np.array([-1.0, 1.0])) == pytest.approx(45.0)


def test_angle_resolves_tiny_separations():
    """acos loses everything under ~2e-8 rad; the result here must keep its digits"""
    u = np.array([1.0, 0.0, 0.0])
    v = np.array([3.0, 3e-10, 0.0])
    assert angle_rad(u, v) == pytest.approx(1e-10, rel=1e-6)
    assert angle_rad(u, -v) == pytest.approx(math.pi - 1e-10, rel=1e-15)
    assert angle_rad(u, u) == 0.0


def test_angle_of_zero_vector_is_undefined():
    with pytest.raises(ValueError):
        angle_deg(np.zeros(2), np.ones(2))


def test_aligned_l2_picks_closer_sign():
    u = np.array([1.0, 2.0])
    assert aligned_l2(u, -u) == 0.0
    assert aligned_l2(u, np.array([1.0, 1.0])) == pytest.approx(1.0)


def test_z_distances_of_identity():
    """Z = I against x = (1, 1, -1, -1): off-diagonal error 1 everywhere"""
    truth = np.array([1.0, 1.0, -1.0, -1.0])
    l1, frob, op = z_distances(np.eye(4), truth, tol=1e-12)
    assert l1 == pytest.approx(0.75)
    assert frob == pytest.approx(math.sqrt(12) / 4)
    assert op == pytest.approx(0.75, rel=1e-8)


def test_z_distances_vanish_at_truth(skewed_spec):
    truth = skewed_spec.membership.astype(float)
    V = np.zeros((skewed_spec.n, 3))
    V[:, 0] = truth
    assert z_distances(V, truth) == (0.0, 0.0, 0.0)


def test_z_distances_blocked_matches_dense(rng, monkeypatch):
    n = 9
    V = rng.standard_normal((n, 3))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    truth = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    D = V @ V.T - np.outer(truth, truth)

    monkeypatch.setattr("sdpcut.services.metrics.Z_BLOCK_ROWS", 4)
    l1, frob, op = z_distances(V, truth, tol=1e-9)
    assert l1 == pytest.approx(np.abs(D).sum() / n ** 2)
    assert frob == pytest.approx(np.linalg.norm(D) / n)
    assert op == pytest.approx(np.linalg.norm(D, 2) / n, rel=1e-6)


def test_z_distances_check_length():
    with pytest.raises(DimensionMismatchError):
        z_distances(np.eye(3), np.ones(4))


def test_svd_l2_bound():
    assert svd_l2_bound(0.5, 0.5, 0.5) == pytest.approx(32.0)


def test_trial_metrics_theta_prefers_sdp():
    m = TrialMetrics(algorithm="sdp", n=4, p=2, success_rate=0.75, snr=1.0, np_gamma_sq=1.0,
                     theta_sdp=10.0, theta_1=20.0)
    assert m.theta == 10.0
    assert m.misclassification_rate == pytest.approx(0.25)
    m.theta_sdp = None
    assert m.theta == 20.0
    assert m.sin_theta is None


def test_sdp_metrics_at_zero_noise(silent_spec):
    dataset = sample(silent_spec, seed=0)
    cd = center(dataset.X)
    sol = solve(build_A(cd), SolverOptions(tol=1e-12, max_iters=5000))
    v1 = top_eigen(cd.gram, tol=1e-12).vector
    metrics = sdp_trial_metrics(dataset, sol, v1=v1)

    assert metrics.algorithm == "sdp"
    assert metrics.success_rate == 1.0
    assert metrics.theta_sdp < 0.1
    assert metrics.phi < 0.1
    assert metrics.z_l1 < 1e-4
    assert metrics.aligned_l2 < 1e-3


def test_sdp_metrics_without_z(balanced_spec):
    dataset = sample(balanced_spec, seed=4)
    sol = solve(build_A(center(dataset.X)), SolverOptions())
    metrics = sdp_trial_metrics(dataset, sol, with_z=False)
    assert metrics.z_l1 is None
    assert metrics.phi is None
    assert 0.5 <= metrics.success_rate <= 1.0


def test_sdp_metrics_require_leading_eigenvector(balanced_spec):
    dataset = sample(balanced_spec, seed=4)
    sol = SdpSolution(factor=np.ones((8, 2)) / math.sqrt(2), objective=0.0, iterations=0, converged=True)
    with pytest.raises(DegenerateSpectrumError):
        sdp_trial_metrics(dataset, sol)


def test_spectral_metrics(skewed_spec):
    dataset = sample(skewed_spec, seed=8)
    gram = reference_R(skewed_spec)
    eigen = top_eigen(gram, tol=1e-12)
    metrics = spectral_trial_metrics(dataset, eigen, sign_split(eigen.vector), "spectral_sign")

    assert metrics.algorithm == "spectral_sign"
    assert metrics.success_rate == 1.0
    assert metrics.theta_1 == pytest.approx(0.0, abs=1e-4)
    assert metrics.svd_l2 == pytest.approx(0.0, abs=1e-10)
    assert metrics.theta_sdp is None
    assert np.allclose(eigen.vector, reference_v1(skewed_spec), atol=1e-8)
