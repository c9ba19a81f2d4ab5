"""LTI system container and horizon-stacked prediction matrices."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, as_vector


class ModelConstructionError(ValueError):
    pass


@dataclass(frozen=True)
class LTISystem:
    """Discrete-time system ``x+ = A x + B u + E w``."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape[1] != n:
            raise ModelConstructionError("A must be square")
        B = as_matrix(self.B, "B")
        E = as_matrix(self.E, "E")
        if B.shape[0] != n or E.shape[0] != n:
            raise ModelConstructionError("B and E must have as many rows as A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "E", E)
        # E must have full column rank so disturbances are recoverable
        sv = np.linalg.svd(E, compute_uv=False)
        if sv.min() <= 1e-10 * sv.max():
            raise ModelConstructionError("E must have full column rank")
        if not self._stabilizable():
            warnings.warn("(A, B) appears not to be stabilizable", stacklevel=2)

    def _stabilizable(self) -> bool:
        # PBH test on unstable eigenvalues
        A, B = self.A, self.B
        n = A.shape[0]
        for lam in np.linalg.eigvals(A):
            if abs(lam) >= 1.0 - 1e-9:
                M = np.hstack([A - lam * np.eye(n), B])
                if np.linalg.matrix_rank(M, tol=1e-9) < n:
                    return False
        return True

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.E.shape[1]


@dataclass(frozen=True)
class StackedModel:
    """Prediction matrices over a horizon: ``xbar = Abar x0 + Bbar ubar + Ebar wbar``."""

    system: LTISystem
    horizon: int
    abar: np.ndarray = field(repr=False)
    bbar: np.ndarray = field(repr=False)
    ebar: np.ndarray = field(repr=False)
    ebar_pinv: np.ndarray = field(repr=False)
    a_powers: tuple = field(repr=False, default=())      # (I, A, ..., A^N)
    e_pinv_small: np.ndarray = field(repr=False, default=None)

    @property
    def n_x(self) -> int:
        return self.system.n_x

    @property
    def n_u(self) -> int:
        return self.system.n_u

    @property
    def n_w(self) -> int:
        return self.system.n_w

    def state_block(self, stacked: np.ndarray, t: int) -> np.ndarray:
        n = self.n_x
        return stacked[t * n:(t + 1) * n]


def build_stacked(sys: LTISystem, horizon: int) -> StackedModel:
    """Assemble the block-banded prediction matrices for the given horizon."""
    if horizon < 1:
        raise ModelConstructionError(f"horizon must be >= 1, got {horizon}")
    N = int(horizon)
    n_x, n_u, n_w = sys.n_x, sys.n_u, sys.n_w
    powers = [np.eye(n_x)]
    for _ in range(N):
        powers.append(sys.A @ powers[-1])
    abar = np.vstack(powers)
    bbar = np.zeros(((N + 1) * n_x, N * n_u))
    ebar = np.zeros(((N + 1) * n_x, N * n_w))
    for i in range(1, N + 1):
        for j in range(i):
            blk = powers[i - 1 - j]
            bbar[i * n_x:(i + 1) * n_x, j * n_u:(j + 1) * n_u] = blk @ sys.B
            ebar[i * n_x:(i + 1) * n_x, j * n_w:(j + 1) * n_w] = blk @ sys.E
    # Moore-Penrose pseudo-inverse with relative singular value cutoff
    u, s, vt = np.linalg.svd(ebar, full_matrices=False)
    cutoff = 1e-10 * s.max()
    if s.min() <= cutoff:
        raise ModelConstructionError("stacked disturbance matrix is rank deficient")
    ebar_pinv = (vt.T / s) @ u.T
    return StackedModel(system=sys, horizon=N, abar=abar, bbar=bbar, ebar=ebar,
                        ebar_pinv=ebar_pinv, a_powers=tuple(powers),
                        e_pinv_small=np.linalg.pinv(sys.E))


def nominal_trajectory(model: StackedModel, z0, vbar) -> np.ndarray:
    """Disturbance-free trajectory ``Abar z0 + Bbar vbar``."""
    z0 = as_vector(z0, "z0", model.n_x)
    vbar = as_vector(vbar, "vbar", model.horizon * model.n_u)
    return model.abar @ z0 + model.bbar @ vbar
