"""Worst-case quadratic cost: trace form and mean/variance decomposition.

The optimizer consumes the trace form, written as a sum of squared affine
terms so the conic layer gets a standard quadratic objective.  The
mean/variance route recomputes the same number from the error-feedback side
by propagating the joint covariance of the whole error history, which makes
the two paths independent checks of each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix, as_vector, check_pd, check_psd, psd_sqrt
from .ambiguity import AmbiguityCalibration, EmpiricalCovariance
from .policy import ErrorFeedbackPolicy, SADFPolicy
from .prediction import LTISystem, StackedModel


@dataclass(frozen=True)
class CostWeights:
    """Stage weights Q, R and terminal weight P, all positive definite."""

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        Q = as_matrix(self.Q, "Q")
        R = as_matrix(self.R, "R")
        P = as_matrix(self.P, "P")
        check_pd(Q, "Q")
        check_pd(R, "R")
        check_pd(P, "P")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P", P)

    def qbar(self, horizon: int) -> np.ndarray:
        n_x = self.Q.shape[0]
        out = np.kron(np.eye(horizon + 1), self.Q)
        out[horizon * n_x:, horizon * n_x:] = self.P
        return out

    def rbar(self, horizon: int) -> np.ndarray:
        return np.kron(np.eye(horizon), self.R)

    def lyapunov_residual(self, sys: LTISystem, gain: np.ndarray) -> np.ndarray:
        """``P - (A+BK)'P(A+BK) - Q - K'RK``; PSD iff the decrease condition holds."""
        a_cl = sys.A + sys.B @ gain
        return self.P - a_cl.T @ self.P @ a_cl - self.Q - gain.T @ self.R @ gain


@dataclass(frozen=True)
class WorstCaseSecondMoment:
    """Worst-case second moment of the stacked disturbance-and-one vector."""

    sigma_d: np.ndarray

    def __post_init__(self):
        sd = as_matrix(self.sigma_d, "sigma_d")
        check_psd(sd, "sigma_d", tol=1e-9)
        if abs(sd[-1, -1] - 1.0) > 1e-12:
            raise ValueError("bottom-right entry of sigma_d must be 1")
        object.__setattr__(self, "sigma_d", sd)

    @classmethod
    def from_calibration(cls, sigma_hat: EmpiricalCovariance,
                         calib: AmbiguityCalibration, horizon: int):
        n = sigma_hat.sigma_hat.shape[0] * horizon
        sd = np.zeros((n + 1, n + 1))
        sd[:n, :n] = calib.kappa * np.kron(np.eye(horizon), sigma_hat.sigma_hat)
        sd[n, n] = 1.0
        return cls(sigma_d=sd)

    def factor(self) -> np.ndarray:
        return psd_sqrt(self.sigma_d)


def trace_cost(policy: SADFPolicy, z0, model: StackedModel, weights: CostWeights,
               moment: WorstCaseSecondMoment) -> float:
    """``tr(Sigma_d [H' Qbar H + F' Rbar F])`` with H = [Bbar Mbar + Ebar, zbar],
    F = [Mbar, vbar]."""
    N = model.horizon
    z0 = as_vector(z0, "z0", model.n_x)
    mbar = policy.assemble_mbar()
    zbar = model.abar @ z0 + model.bbar @ policy.vbar
    h_mat = np.hstack([model.bbar @ mbar + model.ebar, zbar[:, None]])
    f_mat = np.hstack([mbar, policy.vbar[:, None]])
    qbar = weights.qbar(N)
    rbar = weights.rbar(N)
    inner = h_mat.T @ qbar @ h_mat + f_mat.T @ rbar @ f_mat
    return float(np.trace(moment.sigma_d @ inner))


def mean_variance_cost(nominal, gbar, policy: ErrorFeedbackPolicy,
                       weights: CostWeights, kappa_sigma: np.ndarray,
                       sys: LTISystem, sigma_x0: np.ndarray):
    """Mean part and variance part of the cost under the error-feedback policy.

    The variance recursion carries the joint covariance of the whole error
    history so the triangular feedback sums are handled exactly, including
    their cross terms; the injected covariance per step is ``E ks E'`` with
    ``ks`` the (already kappa-scaled) disturbance second moment.  ``sigma_x0``
    is the covariance of the stage-0 error: zero when conditioning on the
    measured state, the propagated one-step covariance otherwise.
    """
    N = policy.horizon
    n_x, n_u = sys.n_x, sys.n_u
    nominal = as_vector(nominal, "nominal", (N + 1) * n_x)
    gbar = as_vector(gbar, "gbar", N * n_u)
    kappa_sigma = as_matrix(kappa_sigma, "kappa_sigma")
    sigma_x0 = as_matrix(sigma_x0, "sigma_x0", (n_x, n_x))
    inject = sys.E @ kappa_sigma @ sys.E.T

    cov = np.zeros(((N + 1) * n_x, (N + 1) * n_x))
    cov[:n_x, :n_x] = sigma_x0
    j_var = 0.0
    for t in range(N):
        gains = np.hstack(policy.stage_gains(t))
        hist = cov[:(t + 1) * n_x, :(t + 1) * n_x]
        sigma_u = gains @ hist @ gains.T
        sigma_x = cov[t * n_x:(t + 1) * n_x, t * n_x:(t + 1) * n_x]
        if np.linalg.eigvalsh(0.5 * (sigma_x + sigma_x.T)).min() < -1e-10:
            raise ValueError("error covariance lost positive semidefiniteness")
        j_var += float(np.trace(weights.Q @ sigma_x)) + float(np.trace(weights.R @ sigma_u))
        trans = np.zeros((n_x, (t + 1) * n_x))
        trans[:, t * n_x:] += sys.A
        trans += sys.B @ gains
        cross = trans @ hist
        cov[(t + 1) * n_x:(t + 2) * n_x, :(t + 1) * n_x] = cross
        cov[:(t + 1) * n_x, (t + 1) * n_x:(t + 2) * n_x] = cross.T
        cov[(t + 1) * n_x:(t + 2) * n_x, (t + 1) * n_x:(t + 2) * n_x] = (
            trans @ hist @ trans.T + inject)
    j_var += float(np.trace(weights.P @ cov[N * n_x:, N * n_x:]))

    j_mean = float(nominal[N * n_x:] @ weights.P @ nominal[N * n_x:])
    for t in range(N):
        zt = nominal[t * n_x:(t + 1) * n_x]
        gt = gbar[t * n_u:(t + 1) * n_u]
        j_mean += float(zt @ weights.Q @ zt) + float(gt @ weights.R @ gt)
    return j_mean, j_var
