"""Distributionally robust chance constraints in second-order cone form.

A halfspace requirement ``P(a' x <= 1) >= p`` over the ambiguity set turns
into an affine-in-decisions cone row: the nominal value must clear 1 by a
margin proportional to ``sqrt(kappa) * sqrt(p/(1-p))`` times the Euclidean
norm of the disturbance-to-constraint map.  Rows whose norm argument does not
depend on any decision variable degenerate to plain linear constraints and
are emitted as such.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_vector, check_in_open_interval, psd_sqrt
from .ambiguity import AmbiguityCalibration, EmpiricalCovariance
from .conic.program import SOCConstraint, VariableLayout
from .prediction import StackedModel


@dataclass(frozen=True)
class HalfspaceSpec:
    """One stacked halfspace ``normal' (xbar or ubar) <= 1`` at level `level`."""

    normal: np.ndarray
    level: float
    stage: int
    index: int
    kind: str  # "state" | "input"

    def __post_init__(self):
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float))
        if self.kind not in ("state", "input"):
            raise ValueError(f"kind must be 'state' or 'input', got {self.kind!r}")
        check_in_open_interval(self.level, 0.0, 1.0, "level")
        if not np.any(self.normal):
            raise ValueError("halfspace normal must be nonzero")


def lift_stage_halfspaces(normal_small, rhs: float, level: float, kind: str,
                          stages, model: StackedModel, index: int = 0):
    """Per-stage constraint ``normal' x_t <= rhs`` lifted into stacked form.

    The right-hand side is normalized to one, which requires ``rhs > 0``.
    """
    if rhs <= 0:
        raise ValueError(f"halfspace right-hand side must be positive, got {rhs}")
    normal_small = np.asarray(normal_small, dtype=float) / rhs
    dim = model.n_x if kind == "state" else model.n_u
    as_vector(normal_small, "normal", dim)
    width = (model.horizon + 1) * model.n_x if kind == "state" else model.horizon * model.n_u
    specs = []
    for t in stages:
        stacked = np.zeros(width)
        stacked[t * dim:(t + 1) * dim] = normal_small
        specs.append(HalfspaceSpec(normal=stacked, level=level, stage=int(t),
                                   index=index, kind=kind))
    return specs


def sigma_n_factor(sigma_hat: EmpiricalCovariance, horizon: int) -> np.ndarray:
    """Block-diagonal factor S with ``S S' = I_N (x) Sigma_hat``."""
    sh = sigma_hat.sigma_hat
    try:
        root = np.linalg.cholesky(sh)
    except np.linalg.LinAlgError:
        root = psd_sqrt(sh)
    return np.kron(np.eye(int(horizon)), root)


@dataclass(frozen=True)
class TighteningRow:
    """Assembled row: either a second-order cone row or a degenerate linear one."""

    spec: HalfspaceSpec
    lhs_coeff: np.ndarray
    lhs_const: float
    vec_coeff: np.ndarray | None
    vec_const: np.ndarray | None

    @property
    def is_linear(self) -> bool:
        return self.vec_coeff is None

    def to_soc(self) -> SOCConstraint:
        if self.is_linear:
            raise ValueError("degenerate row has no cone part")
        return SOCConstraint(lhs_coeff=-self.lhs_coeff, lhs_const=self.lhs_const,
                             vec_coeff=self.vec_coeff, vec_const=self.vec_const,
                             label=f"{self.spec.kind}[t={self.spec.stage},r={self.spec.index}]")

    def margin(self, x: np.ndarray) -> float:
        """Slack of the row at a point (negative means violated)."""
        lhs = self.lhs_const - float(self.lhs_coeff @ x)
        if self.is_linear:
            return lhs
        vec = self.vec_const + self.vec_coeff @ x
        return lhs - float(np.linalg.norm(vec))


def _m_basis(model: StackedModel):
    """Basis matrices of the Toeplitz gain parameterization, entry-major."""
    N, n_u, n_w = model.horizon, model.n_u, model.n_w
    basis = []
    for d in range(1, N):
        for a in range(n_u):
            for b in range(n_w):
                mb = np.zeros((N * n_u, N * n_w))
                for t in range(d, N):
                    mb[t * n_u + a, (t - d) * n_w + b] = 1.0
                basis.append(mb)
    return basis


def _tighten_factor(level: float, calib: AmbiguityCalibration) -> float:
    check_in_open_interval(level, 0.0, 1.0, "level")
    return float(np.sqrt(calib.kappa) * np.sqrt(level / (1.0 - level)))


def state_row(spec: HalfspaceSpec, model: StackedModel, calib: AmbiguityCalibration,
              factor: np.ndarray, layout: VariableLayout) -> TighteningRow:
    """State chance constraint: ``h'zbar <= 1 - f ||h'(Bbar Mbar + Ebar) S||``.

    The scalar side is affine in (z0, vbar) through the nominal dynamics; the
    norm argument is affine in the feedback blocks.
    """
    if spec.kind != "state":
        raise ValueError("state_row requires a state halfspace")
    n = layout.size
    h = spec.normal
    coeff = np.zeros(n)
    coeff[layout.sl("v")] = h @ model.bbar
    coeff[layout.sl("z0")] = h @ model.abar
    scale = _tighten_factor(spec.level, calib)
    const_vec = scale * (factor.T @ (model.ebar.T @ h))
    m_sl = layout.sl("m")
    vec_coeff = np.zeros((factor.shape[1], n))
    bth = model.bbar.T @ h
    for k, mb in enumerate(_m_basis(model)):
        vec_coeff[:, m_sl.start + k] = scale * (factor.T @ (mb.T @ bth))
    if not np.any(vec_coeff):
        return TighteningRow(spec=spec, lhs_coeff=coeff,
                             lhs_const=1.0 - float(np.linalg.norm(const_vec)),
                             vec_coeff=None, vec_const=None)
    return TighteningRow(spec=spec, lhs_coeff=coeff, lhs_const=1.0,
                         vec_coeff=vec_coeff, vec_const=const_vec)


def input_row(spec: HalfspaceSpec, model: StackedModel, calib: AmbiguityCalibration,
              factor: np.ndarray, layout: VariableLayout) -> TighteningRow:
    """Input chance constraint: ``l'vbar <= 1 - f ||l' Mbar S||``."""
    if spec.kind != "input":
        raise ValueError("input_row requires an input halfspace")
    n = layout.size
    ell = spec.normal
    coeff = np.zeros(n)
    coeff[layout.sl("v")] = ell
    scale = _tighten_factor(spec.level, calib)
    m_sl = layout.sl("m")
    vec_coeff = np.zeros((factor.shape[1], n))
    for k, mb in enumerate(_m_basis(model)):
        vec_coeff[:, m_sl.start + k] = scale * (factor.T @ (mb.T @ ell))
    if not np.any(vec_coeff):
        return TighteningRow(spec=spec, lhs_coeff=coeff, lhs_const=1.0,
                             vec_coeff=None, vec_const=None)
    return TighteningRow(spec=spec, lhs_coeff=coeff, lhs_const=1.0,
                         vec_coeff=vec_coeff, vec_const=np.zeros(factor.shape[1]))


def build_rows(specs, model: StackedModel, calib: AmbiguityCalibration,
               sigma_hat: EmpiricalCovariance, layout: VariableLayout):
    factor = sigma_n_factor(sigma_hat, model.horizon)
    rows = []
    for spec in specs:
        if spec.kind == "state":
            rows.append(state_row(spec, model, calib, factor, layout))
        else:
            rows.append(input_row(spec, model, calib, factor, layout))
    return rows
