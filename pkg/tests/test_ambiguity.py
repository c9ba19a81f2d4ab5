import math

import numpy as np
import pytest

from drmpc import (CalibrationInfeasibleError, SubGaussianSpec, calibrate,
                   estimate_covariance, gamma, min_samples, optimize_epsilon)


def oracle_gamma(ns, beta_arg, eps, sigma2, dim):
    c1 = sigma2 / (1 - 2 * eps)
    c2 = dim * math.log(1 + 2 / eps) + math.log(2 / beta_arg)
    return c1 * (math.sqrt(32 * c2 / ns) + 2 * c2 / ns)


class TestEstimateCovariance:
    def test_all_zero_samples(self):
        out = estimate_covariance(np.zeros((5, 2)))
        assert np.array_equal(out.sigma_hat, np.zeros((2, 2)))
        assert out.n_samples == 5

    def test_single_sample_outer_product(self):
        out = estimate_covariance([[1.0, 2.0]])
        assert np.allclose(out.sigma_hat, [[1.0, 2.0], [2.0, 4.0]])

    def test_no_mean_subtraction(self):
        # constant nonzero samples keep their full second moment
        out = estimate_covariance(np.ones((100, 2)))
        assert np.allclose(out.sigma_hat, np.ones((2, 2)))

    def test_law_of_large_numbers(self):
        rng = np.random.default_rng(7)
        draws = rng.standard_normal((1_000_000, 2)) * 0.01
        out = estimate_covariance(draws)
        assert np.all(np.abs(np.diag(out.sigma_hat) - 1e-4) < 0.02 * 1e-4)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            estimate_covariance(np.zeros((0, 2)))


class TestGamma:
    def test_reference_values(self, gauss_spec):
        # frozen from the scalar formula evaluated directly
        assert gamma(516, 0.025, 0.0428, gauss_spec) == pytest.approx(
            0.999199582932741, rel=1e-12)
        assert gamma(1000, 0.025, 0.0428, gauss_spec) == pytest.approx(
            0.707367696922084, rel=1e-12)

    def test_matches_oracle(self, gauss_spec, rng):
        for _ in range(25):
            ns = int(rng.integers(10, 10**7))
            beta_arg = rng.uniform(0.01, 0.9)
            eps = rng.uniform(0.01, 0.49)
            assert gamma(ns, beta_arg, eps, gauss_spec) == pytest.approx(
                oracle_gamma(ns, beta_arg, eps, 1.0, 2), rel=1e-12)

    def test_vanishes_for_huge_sample_count(self, gauss_spec):
        assert gamma(10**12, 0.025, 0.0428, gauss_spec) < 1e-4

    def test_strictly_decreasing_in_samples(self, gauss_spec):
        vals = [gamma(ns, 0.025, 0.0428, gauss_spec)
                for ns in (516, 600, 1000, 10**4, 10**6)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_domain_errors(self, gauss_spec):
        with pytest.raises(ValueError):
            gamma(100, 0.025, 0.6, gauss_spec)
        with pytest.raises(ValueError):
            gamma(100, 1.5, 0.1, gauss_spec)
        with pytest.raises(ValueError):
            gamma(0, 0.025, 0.1, gauss_spec)


class TestMinSamples:
    def test_benchmark_value(self, gauss_spec):
        assert min_samples(0.05, 0.0428, gauss_spec) == 516

    def test_vanishing_variance_proxy(self):
        spec = SubGaussianSpec(sigma2=1e-12, dim=2)
        assert min_samples(0.05, 0.1, spec) == 1

    def test_eps_point_one(self, gauss_spec):
        # frozen from evaluating the closed-form bound at beta/2
        assert min_samples(0.05, 0.1, gauss_spec) == 575

    def test_first_integer_with_radius_below_one(self, gauss_spec):
        for eps in (0.0428, 0.1, 0.2):
            n = min_samples(0.05, eps, gauss_spec)
            assert gamma(n, 0.025, eps, gauss_spec) < 1.0
            if n > 1:
                assert gamma(n - 1, 0.025, eps, gauss_spec) >= 1.0


class TestOptimizeEpsilon:
    def test_matches_reported_value(self, gauss_spec):
        assert optimize_epsilon(0.05, gauss_spec) == pytest.approx(0.0428, abs=2e-3)

    def test_interior(self, gauss_spec, rng):
        for _ in range(5):
            beta = float(rng.uniform(0.01, 0.5))
            eps = optimize_epsilon(beta, gauss_spec)
            assert 0.0 < eps < 0.5

    def test_grid_search_agreement(self, gauss_spec):
        eps_star = optimize_epsilon(0.05, gauss_spec)
        grid = np.arange(0.001, 0.499, 1e-4)
        c1 = 1.0 / (1 - 2 * grid)
        c2 = 2 * np.log(1 + 2 / grid) + np.log(2 / 0.05)
        vals = 2 * c1 * c2 * (8 * c1 + 4 * np.sqrt(4 * c1 ** 2 + c1) + 1)
        assert abs(grid[np.argmin(vals)] - eps_star) < 1e-3


class TestCalibrate:
    def test_kappa_approaches_one(self, gauss_spec):
        calib = calibrate(0.05, gauss_spec, 10**12)
        assert calib.kappa == pytest.approx(1.0, abs=1e-4)

    def test_reference_points(self, gauss_spec):
        # oracle: kappa = 1 / (1 - gamma(N, beta/2, eps*))
        eps_star = optimize_epsilon(0.05, gauss_spec)
        for ns in (517, 1000):
            calib = calibrate(0.05, gauss_spec, ns)
            expect = 1.0 / (1.0 - oracle_gamma(ns, 0.025, eps_star, 1.0, 2))
            assert calib.kappa == pytest.approx(expect, rel=1e-10)
        assert 100 < calibrate(0.05, gauss_spec, 517).kappa < 1500
        assert calibrate(0.05, gauss_spec, 1000).kappa == pytest.approx(3.42, abs=0.05)

    def test_explicit_epsilon(self, gauss_spec):
        calib = calibrate(0.05, gauss_spec, 517, epsilon=0.0428)
        assert calib.kappa == pytest.approx(550.4, rel=1e-2)

    def test_kappa_decreasing_in_samples(self, gauss_spec):
        kappas = [calibrate(0.05, gauss_spec, ns).kappa
                  for ns in (520, 550, 1000, 10**5, 10**6)]
        assert all(a > b for a, b in zip(kappas, kappas[1:]))
        assert all(k >= 1 for k in kappas)

    def test_insufficient_samples_error(self, gauss_spec):
        with pytest.raises(CalibrationInfeasibleError) as err:
            calibrate(0.05, gauss_spec, 100)
        assert "minimum" in str(err.value)
