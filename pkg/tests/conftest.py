"""
Shared fixtures for the sdpcut test suite
"""

import os

import numpy as np
import pytest

from sdpcut.app.config import settings
from sdpcut.services.mixture_model import make_bernoulli_spec, make_gaussian_spec


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SDPCUT_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="desk-scale run; set SDPCUT_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "log_dir", tmp_path / "logs")
    monkeypatch.setattr(settings, "output_dir", tmp_path / "results")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def balanced_spec():
    """n=8 balanced Gaussian mixture, Delta^2 = 5, gamma = 0.25"""
    return make_gaussian_spec(alpha=0.5, eps=0.0, p=20, n=8, w1=0.5)


@pytest.fixture
def skewed_spec():
    """n=10 with w1=0.7 realized exactly"""
    return make_gaussian_spec(alpha=0.5, eps=0.0, p=20, n=10, w1=0.7)


@pytest.fixture
def silent_spec():
    """Zero-noise balanced spec: every sample equals its cluster mean"""
    return make_gaussian_spec(alpha=0.5, eps=0.0, p=20, n=8, w1=0.5, sigma1=0.0, sigma2=0.0)


@pytest.fixture
def unequal_spec():
    """Diagonal noise with different variance profiles per cluster"""
    return make_gaussian_spec(alpha=0.3, eps=0.0, p=100, n=16, w1=0.5, sigma1=1.0, sigma2=1.5)


@pytest.fixture
def bernoulli_spec():
    return make_bernoulli_spec(alpha=0.04, eps=0.004, p=400, n=40, w1=0.5)


def random_symmetric(rng, n, eigenvalues=None):
    """Symmetric matrix; with `eigenvalues` the spectrum is prescribed"""
    if eigenvalues is None:
        M = rng.standard_normal((n, n))
        return (M + M.T) / 2.0
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    S = (Q * np.asarray(eigenvalues, dtype=float)) @ Q.T
    return (S + S.T) / 2.0
