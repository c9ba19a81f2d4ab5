"""Moment-based ambiguity set calibration from disturbance samples.

The disturbance is assumed zero-mean sub-Gaussian.  From i.i.d. samples we
estimate the second moment and compute a concentration radius gamma so that
the true covariance is dominated by ``kappa * Sigma_hat`` with a prescribed
confidence.  All formulas use the natural logarithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_in_open_interval


@dataclass(frozen=True)
class SubGaussianSpec:
    """Sub-Gaussian disturbance description: variance proxy and dimension."""

    sigma2: float
    dim: int

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if int(self.dim) < 1 or self.dim != int(self.dim):
            raise ValueError(f"dim must be a positive integer, got {self.dim}")


@dataclass(frozen=True)
class AmbiguityCalibration:
    """Calibrated ambiguity set parameters for a given sample count."""

    beta: float
    epsilon: float
    n_samples: int
    gamma: float
    kappa: float

    def __post_init__(self):
        if not self.gamma < 1.0:
            raise ValueError(f"gamma must be < 1, got {self.gamma}")
        if self.kappa < 1.0:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")


@dataclass(frozen=True)
class EmpiricalCovariance:
    """Second-moment estimate ``Sigma_hat`` and the sample count behind it."""

    sigma_hat: np.ndarray
    n_samples: int

    def __post_init__(self):
        sh = np.asarray(self.sigma_hat, dtype=float)
        if np.max(np.abs(sh - sh.T)) > 1e-12 * max(1.0, np.max(np.abs(sh))):
            raise ValueError("sigma_hat must be symmetric")
        if np.linalg.eigvalsh(sh).min() < -1e-12:
            raise ValueError("sigma_hat must be positive semidefinite")
        object.__setattr__(self, "sigma_hat", sh)


def estimate_covariance(samples) -> EmpiricalCovariance:
    """Second-moment matrix ``(1/N) sum_i w_i w_i'`` of the given samples.

    The mean is known to be zero, so no centering is applied.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("samples must be a nonempty (n_samples, n_w) array")
    n = arr.shape[0]
    sigma_hat = arr.T @ arr / n
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)
    return EmpiricalCovariance(sigma_hat=sigma_hat, n_samples=n)


def _c1(sigma2: float, epsilon: float) -> float:
    return sigma2 / (1.0 - 2.0 * epsilon)


def _c2(beta_arg: float, epsilon: float, dim: int) -> float:
    return dim * math.log(1.0 + 2.0 / epsilon) + math.log(2.0 / beta_arg)


def gamma(n_samples: int, beta_arg: float, epsilon: float, spec: SubGaussianSpec) -> float:
    """Concentration radius ``c1 (sqrt(32 c2 / N) + 2 c2 / N)``.

    ``beta_arg`` is the confidence argument as passed (callers supply beta/2
    when they need the two-sided covariance bound).
    """
    check_in_open_interval(beta_arg, 0.0, 1.0, "beta_arg")
    check_in_open_interval(epsilon, 0.0, 0.5, "epsilon")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    c1 = _c1(spec.sigma2, epsilon)
    c2 = _c2(beta_arg, epsilon, spec.dim)
    return c1 * (math.sqrt(32.0 * c2 / n_samples) + 2.0 * c2 / n_samples)


def _sample_bound(beta: float, epsilon: float, spec: SubGaussianSpec,
                  half_beta: bool) -> float:
    """Right-hand side of the sample-count condition ``2 c1 c2 (8 c1 + ...)``."""
    c1 = _c1(spec.sigma2, epsilon)
    c2 = _c2(beta / 2.0 if half_beta else beta, epsilon, spec.dim)
    return 2.0 * c1 * c2 * (8.0 * c1 + 4.0 * math.sqrt(4.0 * c1 * c1 + c1) + 1.0)


def min_samples(beta: float, epsilon: float, spec: SubGaussianSpec) -> int:
    """Smallest sample count guaranteeing ``gamma(N, beta/2) < 1``.

    Closed-form ceiling of the quadratic-in-sqrt(N) condition, with the
    confidence term evaluated at beta/2 to match the covariance bound it
    protects.  Clamped to at least one sample.
    """
    check_in_open_interval(beta, 0.0, 1.0, "beta")
    check_in_open_interval(epsilon, 0.0, 0.5, "epsilon")
    return max(1, math.ceil(_sample_bound(beta, epsilon, spec, half_beta=True)))


def optimize_epsilon(beta: float, spec: SubGaussianSpec, tol: float = 1e-6) -> float:
    """Pick epsilon in (0, 0.5) minimizing the sample-count bound.

    Golden-section search on the scalar convex objective; bracket stays a
    hair inside the open interval.
    """
    check_in_open_interval(beta, 0.0, 1.0, "beta")

    def objective(eps: float) -> float:
        return _sample_bound(beta, eps, spec, half_beta=False)

    lo, hi = 1e-4, 0.5 - 1e-4
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - inv_phi * (hi - lo)
    x2 = lo + inv_phi * (hi - lo)
    f1, f2 = objective(x1), objective(x2)
    while hi - lo > tol:
        if f1 < f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv_phi * (hi - lo)
            f1 = objective(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv_phi * (hi - lo)
            f2 = objective(x2)
    return 0.5 * (lo + hi)


def calibrate(beta: float, spec: SubGaussianSpec, n_samples: int,
              epsilon: float | None = None) -> AmbiguityCalibration:
    """Compute ``kappa = 1 / (1 - gamma(N, beta/2))`` for the given sample count.

    ``epsilon`` defaults to the optimized value; passing it explicitly allows
    reproducing reported setups that fixed epsilon by hand.  Raises if the
    sample count is below the minimum required for a meaningful radius.
    """
    check_in_open_interval(beta, 0.0, 1.0, "beta")
    eps = optimize_epsilon(beta, spec) if epsilon is None else float(epsilon)
    check_in_open_interval(eps, 0.0, 0.5, "epsilon")
    required = min_samples(beta, eps, spec)
    if n_samples < required:
        raise CalibrationInfeasibleError(
            f"n_samples={n_samples} is below the minimum {required} needed for "
            f"beta={beta}, epsilon={eps:.4g}"
        )
    g = gamma(n_samples, beta / 2.0, eps, spec)
    if g >= 1.0:
        raise CalibrationInfeasibleError(
            f"gamma({n_samples}) = {g:.6f} >= 1; need at least {required} samples"
        )
    return AmbiguityCalibration(beta=beta, epsilon=eps, n_samples=int(n_samples),
                                gamma=g, kappa=1.0 / (1.0 - g))


class CalibrationInfeasibleError(ValueError):
    """Sample count too small for the requested confidence level."""
