import numpy as np
import pytest

from drmpc import (AmbiguityCalibration, CostWeights, EmpiricalCovariance,
                   LTISystem, SubGaussianSpec, build_stacked)


@pytest.fixture(scope="session")
def bench_system():
    return LTISystem(A=[[1.0, 1.0], [0.0, 1.0]], B=[[0.5], [1.0]],
                     E=[[1.0, 0.0], [0.0, 1.0]])


@pytest.fixture(scope="session")
def bench_model(bench_system):
    return build_stacked(bench_system, 10)


@pytest.fixture(scope="session")
def small_model(bench_system):
    return build_stacked(bench_system, 4)


@pytest.fixture(scope="session")
def bench_weights():
    # terminal weight from the Riccati pair for Q = 10 I, R = 1
    from drmpc import synthesize_gain
    sys = LTISystem(A=[[1.0, 1.0], [0.0, 1.0]], B=[[0.5], [1.0]],
                    E=[[1.0, 0.0], [0.0, 1.0]])
    _, P = synthesize_gain(sys, 10 * np.eye(2), np.array([[1.0]]))
    return CostWeights(Q=10 * np.eye(2), R=np.array([[1.0]]), P=P)


@pytest.fixture(scope="session")
def gauss_spec():
    return SubGaussianSpec(sigma2=1.0, dim=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, n, scale=1.0):
    m = rng.standard_normal((n, n))
    return scale * (m @ m.T) / n


@pytest.fixture(scope="session")
def unit_calibration():
    """kappa = 1 calibration (exact moment information)."""
    return AmbiguityCalibration(beta=0.05, epsilon=0.1, n_samples=10**9,
                                gamma=0.0, kappa=1.0)


@pytest.fixture(scope="session")
def small_sigma_hat():
    return EmpiricalCovariance(sigma_hat=1e-4 * np.eye(2), n_samples=1000)
