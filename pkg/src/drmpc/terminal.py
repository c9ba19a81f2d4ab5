"""Terminal ingredients: gain, weight, steady-state covariance, set scaling.

The terminal controller is the infinite-horizon LQR gain; the ellipsoid
``{z : z'Pz <= alpha}`` is scaled so every tightened terminal halfspace holds
on it, which reduces to comparing each tightened bound with the ellipsoid
support function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, check_pd, psd_sqrt
from .prediction import LTISystem


class TerminalSetEmptyError(ValueError):
    pass


class DareConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TerminalIngredients:
    gain: np.ndarray
    weight: np.ndarray
    sigma_inf: np.ndarray
    alpha: float
    halfspaces: tuple = field(default_factory=tuple)  # (normal, level, kind)

    def __post_init__(self):
        object.__setattr__(self, "gain", as_matrix(self.gain, "gain"))
        object.__setattr__(self, "weight", as_matrix(self.weight, "weight"))
        object.__setattr__(self, "sigma_inf", as_matrix(self.sigma_inf, "sigma_inf"))
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def to_dict(self) -> dict:
        return {"gain": self.gain.tolist(), "weight": self.weight.tolist(),
                "sigma_inf": self.sigma_inf.tolist(), "alpha": self.alpha,
                "halfspaces": [(np.asarray(h).tolist(), p, kind)
                               for h, p, kind in self.halfspaces]}

    @classmethod
    def from_dict(cls, data: dict) -> "TerminalIngredients":
        return cls(gain=np.asarray(data["gain"], dtype=float),
                   weight=np.asarray(data["weight"], dtype=float),
                   sigma_inf=np.asarray(data["sigma_inf"], dtype=float),
                   alpha=float(data["alpha"]),
                   halfspaces=tuple((np.asarray(h, dtype=float), float(p), kind)
                                    for h, p, kind in data.get("halfspaces", [])))


def synthesize_gain(sys: LTISystem, Q, R, tol: float = 1e-12,
                    max_iter: int = 10_000):
    """Infinite-horizon LQR pair (K, P) from the Riccati fixed point.

    At the fixed point the decrease condition holds with equality, so the
    returned pair always satisfies it.
    """
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    check_pd(Q, "Q")
    check_pd(R, "R")
    A, B = sys.A, sys.B
    P = Q.copy()
    for _ in range(max_iter):
        gain = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P_next = Q + A.T @ P @ (A + B @ gain)
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P))):
            gain = -np.linalg.solve(R + B.T @ P_next @ B, B.T @ P_next @ A)
            if np.max(np.abs(np.linalg.eigvals(A + B @ gain))) >= 1.0:
                raise DareConvergenceError("closed loop not Schur stable")
            return gain, P_next
        P = P_next
    raise DareConvergenceError(f"Riccati iteration did not converge in {max_iter} steps")


def steady_state_cov(sys: LTISystem, gain: np.ndarray, kappa_sigma,
                     tol: float = 1e-12) -> np.ndarray:
    """Fixed point of ``S = (A+BK) S (A+BK)' + E ks E'`` by doubling."""
    kappa_sigma = as_matrix(kappa_sigma, "kappa_sigma")
    a_cl = sys.A + sys.B @ np.asarray(gain, dtype=float)
    if np.max(np.abs(np.linalg.eigvals(a_cl))) >= 1.0:
        raise ValueError("closed loop must be Schur stable")
    inject = sys.E @ kappa_sigma @ sys.E.T
    total = inject.copy()
    power = a_cl.copy()
    for _ in range(200):
        nxt = total + power @ total @ power.T
        power = power @ power
        if np.max(np.abs(nxt - total)) <= tol * max(1.0, np.max(np.abs(total))):
            return 0.5 * (nxt + nxt.T)
        total = nxt
    return 0.5 * (total + total.T)


def max_alpha(weight, gain, sigma_inf, halfspaces) -> float:
    """Largest sublevel ``alpha`` keeping every tightened halfspace satisfied.

    Each halfspace (state normal h or input normal l through the gain)
    contributes ``(tightened rhs)^2 / (a' P^{-1} a)`` via the ellipsoid
    support function ``max_{z'Pz<=alpha} a'z = sqrt(alpha a'P^{-1}a)``.
    """
    weight = as_matrix(weight, "weight")
    gain = as_matrix(gain, "gain")
    sigma_inf = as_matrix(sigma_inf, "sigma_inf")
    root = psd_sqrt(sigma_inf)
    weight_inv = np.linalg.inv(weight)
    alpha = np.inf
    for normal, level, kind in halfspaces:
        normal = np.asarray(normal, dtype=float)
        if kind == "state":
            direction = normal
        elif kind == "input":
            direction = gain.T @ normal
        else:
            raise ValueError(f"unknown halfspace kind {kind!r}")
        tightening = np.sqrt(level / (1.0 - level)) * np.linalg.norm(root @ direction)
        rhs = 1.0 - tightening
        if rhs <= 0:
            raise TerminalSetEmptyError(
                f"terminal {kind} halfspace (level {level}) is infeasible: "
                f"tightening {tightening:.4f} >= 1")
        denom = float(direction @ weight_inv @ direction)
        if denom > 0:
            alpha = min(alpha, rhs * rhs / denom)
    if not np.isfinite(alpha):
        raise TerminalSetEmptyError("no effective halfspaces given")
    return float(alpha)


def check_invariance(sys: LTISystem, gain, weight, alpha: float) -> bool:
    """Nominal invariance of the ellipsoid under the terminal controller."""
    gain = as_matrix(gain, "gain")
    weight = as_matrix(weight, "weight")
    a_cl = sys.A + sys.B @ gain
    residual = weight - a_cl.T @ weight @ a_cl
    return bool(np.linalg.eigvalsh(0.5 * (residual + residual.T)).min() >= -1e-10)


def synthesize(sys: LTISystem, Q, R, kappa_sigma, halfspaces) -> TerminalIngredients:
    """End-to-end terminal design: LQR pair, steady covariance, set scaling."""
    gain, weight = synthesize_gain(sys, Q, R)
    sigma_inf = steady_state_cov(sys, gain, kappa_sigma)
    alpha = max_alpha(weight, gain, sigma_inf, halfspaces)
    return TerminalIngredients(gain=gain, weight=weight, sigma_inf=sigma_inf,
                               alpha=alpha, halfspaces=tuple(halfspaces))
