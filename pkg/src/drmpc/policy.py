"""Affine disturbance-feedback and error-feedback policy representations.

The disturbance-feedback form drives the optimizer: inputs are affine in past
disturbances with time-shift-invariant gain blocks.  The error-feedback form
(`u_t = g_t + sum_i K_{t-i} (x_i - z_i)`, errors measured from the nominal
trajectory) is what the closed loop applies and what the candidate-shifting
argument manipulates.  Both directions of the conversion are exact; the
key identity is that the assembled error gains solve
``Kbar (Bbar Mbar + Ebar) = Mbar`` block by block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_vector
from .prediction import StackedModel


class PolicyTransformError(RuntimeError):
    pass


@dataclass(frozen=True)
class SADFPolicy:
    """Disturbance feedback ``u_t = v_t + sum_{i<t} M_{t-i} w_i``."""

    vbar: np.ndarray
    m_blocks: tuple  # (M_1, ..., M_{N-1}), each n_u x n_w

    def __post_init__(self):
        object.__setattr__(self, "vbar", np.asarray(self.vbar, dtype=float))
        object.__setattr__(self, "m_blocks",
                           tuple(np.asarray(m, dtype=float) for m in self.m_blocks))

    @property
    def horizon(self) -> int:
        return len(self.m_blocks) + 1

    def assemble_mbar(self) -> np.ndarray:
        """Strictly block-lower-triangular Toeplitz gain matrix."""
        N = self.horizon
        n_u, n_w = (self.m_blocks[0].shape if self.m_blocks else (self.vbar.size // N, 0))
        if not self.m_blocks:
            n_w = 0
        mbar = np.zeros((N * n_u, N * n_w))
        for t in range(N):
            for i in range(t):
                mbar[t * n_u:(t + 1) * n_u, i * n_w:(i + 1) * n_w] = self.m_blocks[t - i - 1]
        return mbar

    def to_dict(self) -> dict:
        return {"vbar": self.vbar.tolist(),
                "m_blocks": [m.tolist() for m in self.m_blocks]}

    @classmethod
    def from_dict(cls, data: dict) -> "SADFPolicy":
        return cls(vbar=np.asarray(data["vbar"], dtype=float),
                   m_blocks=tuple(np.asarray(m, dtype=float) for m in data["m_blocks"]))


@dataclass(frozen=True)
class ErrorFeedbackPolicy:
    """Error feedback ``u_t = g_t + sum_{i<=t} K_{t-i} (x_i - z_i)``.

    ``terminal_gain``, when set, replaces the whole feedback sum at the last
    stage with a single gain on the current error; this encodes the appended
    terminal controller of the shifted candidate.
    """

    gbar: np.ndarray
    k_blocks: tuple  # (K_0, ..., K_{N-1}), each n_u x n_x
    terminal_gain: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "gbar", np.asarray(self.gbar, dtype=float))
        object.__setattr__(self, "k_blocks",
                           tuple(np.asarray(k, dtype=float) for k in self.k_blocks))
        if self.terminal_gain is not None:
            object.__setattr__(self, "terminal_gain",
                               np.asarray(self.terminal_gain, dtype=float))

    @property
    def horizon(self) -> int:
        return len(self.k_blocks)

    def stage_gains(self, t: int) -> list:
        """Gains on (e_0, ..., e_t) applied at stage t."""
        N = self.horizon
        n_u, n_x = self.k_blocks[0].shape
        if self.terminal_gain is not None and t == N - 1:
            return [np.zeros((n_u, n_x))] * (N - 1) + [self.terminal_gain]
        return [self.k_blocks[t - i] for i in range(t + 1)]

    def assemble_kbar(self) -> np.ndarray:
        """Block-lower-triangular gain matrix with zero last block column."""
        N = self.horizon
        n_u, n_x = self.k_blocks[0].shape
        kbar = np.zeros((N * n_u, (N + 1) * n_x))
        for t in range(N):
            for i, gain in enumerate(self.stage_gains(t)):
                kbar[t * n_u:(t + 1) * n_u, i * n_x:(i + 1) * n_x] = gain
        return kbar

    def to_dict(self) -> dict:
        return {"gbar": self.gbar.tolist(),
                "k_blocks": [k.tolist() for k in self.k_blocks],
                "terminal_gain": None if self.terminal_gain is None
                else self.terminal_gain.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ErrorFeedbackPolicy":
        tg = data.get("terminal_gain")
        return cls(gbar=np.asarray(data["gbar"], dtype=float),
                   k_blocks=tuple(np.asarray(k, dtype=float) for k in data["k_blocks"]),
                   terminal_gain=None if tg is None else np.asarray(tg, dtype=float))


def _closed_loop_gamma_blocks(model: StackedModel, m_blocks) -> list:
    """Blocks Gamma_d of Bbar Mbar + Ebar: Gamma_1 = E,
    Gamma_d = A^{d-1} E + sum_{m<d} A^{d-1-m} B M_m."""
    sys = model.system
    N = model.horizon
    gams = [None, sys.E.copy()]
    apow = model.a_powers
    ab = [apow[i] @ sys.B for i in range(N)]
    for d in range(2, N + 1):
        acc = apow[d - 1] @ sys.E
        for m in range(1, d):
            acc = acc + ab[d - 1 - m] @ m_blocks[m - 1]
        gams.append(acc)
    return gams


def sadf_to_ef(policy: SADFPolicy, model: StackedModel, z0=None) -> ErrorFeedbackPolicy:
    """Convert disturbance feedback to the equivalent error-feedback policy.

    The feedforward equals the nominal input, and the Toeplitz error gains
    are the unique causal solution of ``Kbar (Bbar Mbar + Ebar) = Mbar``,
    obtained by peeling one diagonal at a time.  The initial state drops out
    because errors are measured from the nominal trajectory started at it.
    """
    N = model.horizon
    if policy.horizon != N:
        raise PolicyTransformError("policy horizon does not match model")
    e_dag = model.e_pinv_small
    gams = _closed_loop_gamma_blocks(model, policy.m_blocks)
    k_blocks: list = []
    for d in range(1, N):
        acc = policy.m_blocks[d - 1].copy()
        for e_idx in range(2, d + 1):
            acc = acc - k_blocks[d - e_idx] @ gams[e_idx]
        k_blocks.append(acc @ e_dag)
    # last block continues the Toeplitz pattern with a formal zero target
    acc = np.zeros((model.n_u, model.n_w))
    for e_idx in range(2, N + 1):
        acc = acc - k_blocks[N - e_idx] @ gams[e_idx]
    k_blocks.append(acc @ e_dag)
    return ErrorFeedbackPolicy(gbar=policy.vbar.copy(), k_blocks=tuple(k_blocks))


def ef_to_sadf(policy: ErrorFeedbackPolicy, model: StackedModel, z0=None,
               structure_tol: float = 1e-9) -> SADFPolicy:
    """Convert error feedback back to disturbance feedback.

    Uses ``Mbar = Kbar (I - Bbar Kbar)^{-1} Ebar``; the feedforward carries
    over unchanged since the expected error is zero.  When the gains are
    Toeplitz the recovered matrix is checked against the Toeplitz pattern.
    """
    N = model.horizon
    kbar = policy.assemble_kbar()
    eye = np.eye((N + 1) * model.n_x)
    mat = eye - model.bbar @ kbar
    try:
        inner = np.linalg.solve(mat, model.ebar)
    except np.linalg.LinAlgError as exc:
        raise PolicyTransformError("(I - Bbar Kbar) is singular") from exc
    cond = np.linalg.cond(mat)
    if cond > 1e12:
        import warnings
        warnings.warn(f"(I - Bbar Kbar) is ill conditioned (cond={cond:.2e})",
                      stacklevel=2)
    mbar = kbar @ inner
    n_u, n_w = model.n_u, model.n_w
    blocks = [mbar[d * n_u:(d + 1) * n_u, 0:n_w].copy() for d in range(1, N)]
    if policy.terminal_gain is None:
        rebuilt = SADFPolicy(vbar=policy.gbar.copy(), m_blocks=tuple(blocks)).assemble_mbar()
        dev = np.max(np.abs(rebuilt - mbar)) if mbar.size else 0.0
        if dev > structure_tol * max(1.0, np.max(np.abs(mbar))):
            raise PolicyTransformError(
                f"recovered gains deviate from the Toeplitz pattern by {dev:.2e}")
    return SADFPolicy(vbar=policy.gbar.copy(), m_blocks=tuple(blocks))


def shift_candidate(prev: ErrorFeedbackPolicy, prev_nominal: np.ndarray,
                    terminal_gain: np.ndarray, model: StackedModel):
    """One-step-shifted candidate policy with the terminal controller appended.

    Returns ``(candidate policy, candidate nominal trajectory, lambda=1)``.
    The candidate reuses the previous gains one stage later and closes the
    last stage with the terminal gain acting on the current error; its
    nominal trajectory shifts and appends the terminal-controller successor.
    """
    N = model.horizon
    n_x, n_u = model.n_x, model.n_u
    prev_nominal = as_vector(prev_nominal, "prev_nominal", (N + 1) * n_x)
    terminal_gain = np.asarray(terminal_gain, dtype=float)
    z_last = prev_nominal[N * n_x:]
    a_cl = model.system.A + model.system.B @ terminal_gain
    nominal = np.empty((N + 1) * n_x)
    nominal[:N * n_x] = prev_nominal[n_x:]
    nominal[N * n_x:] = a_cl @ z_last
    gbar = np.empty(N * n_u)
    gbar[:(N - 1) * n_u] = prev.gbar[n_u:]
    gbar[(N - 1) * n_u:] = terminal_gain @ z_last
    candidate = ErrorFeedbackPolicy(gbar=gbar, k_blocks=prev.k_blocks,
                                    terminal_gain=terminal_gain)
    return candidate, nominal, 1.0


def applied_input(policy: ErrorFeedbackPolicy, x, z0) -> np.ndarray:
    """Stage-0 closed-loop input ``g_0 + K_0 (x - z_0)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    z0 = np.asarray(z0, dtype=float).reshape(-1)
    n_u = policy.k_blocks[0].shape[0]
    return policy.gbar[:n_u] + policy.k_blocks[0] @ (x - z0)


def simulate_sadf(policy: SADFPolicy, model: StackedModel, x0, wbar):
    """Stacked rollout of the disturbance-feedback policy (test oracle)."""
    x0 = as_vector(x0, "x0", model.n_x)
    wbar = as_vector(wbar, "wbar", model.horizon * model.n_w)
    ubar = policy.vbar + policy.assemble_mbar() @ wbar
    xbar = model.abar @ x0 + model.bbar @ ubar + model.ebar @ wbar
    return xbar, ubar


def simulate_ef(policy: ErrorFeedbackPolicy, model: StackedModel, x0, nominal, wbar):
    """Step-by-step rollout of the error-feedback policy (test oracle)."""
    sys = model.system
    N = model.horizon
    x0 = as_vector(x0, "x0", sys.n_x)
    nominal = as_vector(nominal, "nominal", (N + 1) * sys.n_x)
    wbar = as_vector(wbar, "wbar", N * sys.n_w)
    xbar = np.empty((N + 1) * sys.n_x)
    ubar = np.empty(N * sys.n_u)
    xbar[:sys.n_x] = x0
    for t in range(N):
        u = policy.gbar[t * sys.n_u:(t + 1) * sys.n_u].copy()
        for i, gain in enumerate(policy.stage_gains(t)):
            err = xbar[i * sys.n_x:(i + 1) * sys.n_x] - nominal[i * sys.n_x:(i + 1) * sys.n_x]
            u = u + gain @ err
        ubar[t * sys.n_u:(t + 1) * sys.n_u] = u
        w = wbar[t * sys.n_w:(t + 1) * sys.n_w]
        xbar[(t + 1) * sys.n_x:(t + 2) * sys.n_x] = (
            sys.A @ xbar[t * sys.n_x:(t + 1) * sys.n_x] + sys.B @ u + sys.E @ w)
    return xbar, ubar
