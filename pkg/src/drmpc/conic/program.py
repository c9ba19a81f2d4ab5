"""Solver-agnostic conic program representation.

A :class:`ConicProgram` owns a registry of named variable blocks and collects
a convex quadratic objective (sum of squared affine forms plus a linear
term), affine equalities, linear inequalities, second-order cone rows, and
box bounds.  :func:`solve` lowers it to the standard form consumed by the
embedded interior-point backend.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .ipm import Cone


class VariableLayout:
    """Ordered registry of named variable blocks inside one flat vector."""

    def __init__(self, blocks):
        self.names = []
        self.slices = {}
        off = 0
        for name, size in blocks:
            if name in self.slices:
                raise ValueError(f"duplicate variable block {name!r}")
            self.names.append(name)
            self.slices[name] = slice(off, off + int(size))
            off += int(size)
        self.size = off

    def sl(self, name: str) -> slice:
        return self.slices[name]

    def split(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {name: np.array(x[self.slices[name]]) for name in self.names}

    def blocks(self):
        return [(name, self.slices[name].stop - self.slices[name].start)
                for name in self.names]


@dataclass(frozen=True)
class SOCConstraint:
    """``lhs_const + lhs_coeff @ x >= || vec_const + vec_coeff @ x ||_2``."""

    lhs_coeff: np.ndarray
    lhs_const: float
    vec_coeff: np.ndarray
    vec_const: np.ndarray
    label: str = ""


@dataclass
class ConicProgram:
    """Quadratic-objective conic program over named variable blocks."""

    layout: VariableLayout
    quad_terms: list = field(default_factory=list)     # (L, c): adds ||L x + c||^2
    lin_cost: np.ndarray | None = None
    const_cost: float = 0.0
    eq_coeff: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    lin_rows: list = field(default_factory=list)       # (row, ub): row @ x <= ub
    soc_rows: list = field(default_factory=list)       # SOCConstraint
    bounds: dict = field(default_factory=dict)         # name -> (lo, hi) scalars

    # ---- construction helpers ----

    def add_square_term(self, L: np.ndarray, c: np.ndarray | None = None) -> None:
        L = np.atleast_2d(np.asarray(L, dtype=float))
        if L.shape[1] != self.layout.size:
            raise ValueError("square term has wrong width")
        c = np.zeros(L.shape[0]) if c is None else np.asarray(c, dtype=float)
        self.quad_terms.append((L, c))

    def add_linear_cost(self, q: np.ndarray) -> None:
        q = np.asarray(q, dtype=float)
        self.lin_cost = q if self.lin_cost is None else self.lin_cost + q

    def set_equalities(self, coeff: np.ndarray, rhs: np.ndarray) -> None:
        coeff = np.atleast_2d(np.asarray(coeff, dtype=float))
        if coeff.shape[1] != self.layout.size:
            raise ValueError("equality block has wrong width")
        self.eq_coeff = coeff
        self.eq_rhs = np.asarray(rhs, dtype=float).reshape(-1)

    def add_lin_row(self, row: np.ndarray, ub: float, label: str = "") -> None:
        self.lin_rows.append((np.asarray(row, dtype=float), float(ub), label))

    def add_soc(self, soc: SOCConstraint) -> None:
        if soc.lhs_coeff.size != self.layout.size:
            raise ValueError("SOC row has wrong width")
        self.soc_rows.append(soc)

    def set_bounds(self, name: str, lo: float, hi: float) -> None:
        self.bounds[name] = (float(lo), float(hi))

    def with_equalities(self, coeff: np.ndarray, rhs: np.ndarray) -> "ConicProgram":
        """Shallow copy sharing all constraint data but new equality block."""
        prog = ConicProgram(layout=self.layout, quad_terms=self.quad_terms,
                            lin_cost=self.lin_cost, const_cost=self.const_cost,
                            lin_rows=self.lin_rows, soc_rows=self.soc_rows,
                            bounds=self.bounds)
        prog.set_equalities(coeff, rhs)
        prog._compiled = getattr(self, "_compiled", None)
        return prog

    # ---- lowering ----

    def compile(self):
        """Cache the standard-form (P, q, G, h, cone) arrays; A, b stay per-solve."""
        n = self.layout.size
        P = np.zeros((n, n))
        q = np.zeros(n) if self.lin_cost is None else self.lin_cost.copy()
        const = self.const_cost
        for L, c in self.quad_terms:
            P += 2.0 * L.T @ L
            q += 2.0 * L.T @ c
            const += float(c @ c)
        rows = []
        ubs = []
        for name, (lo, hi) in self.bounds.items():
            sl = self.layout.sl(name)
            for j in range(sl.start, sl.stop):
                r = np.zeros(n)
                r[j] = -1.0
                rows.append(r)
                ubs.append(-lo)
                r2 = np.zeros(n)
                r2[j] = 1.0
                rows.append(r2)
                ubs.append(hi)
        for row, ub, _ in self.lin_rows:
            rows.append(row)
            ubs.append(ub)
        G_lin = np.vstack(rows) if rows else np.zeros((0, n))
        h_lin = np.asarray(ubs, dtype=float)
        G_soc = []
        h_soc = []
        socs = []
        for soc in self.soc_rows:
            d = 1 + soc.vec_coeff.shape[0]
            Gi = np.empty((d, n))
            hi_ = np.empty(d)
            # slack is (lhs_const + lhs_coeff x, vec_const + vec_coeff x)
            Gi[0] = -soc.lhs_coeff
            hi_[0] = soc.lhs_const
            Gi[1:] = -soc.vec_coeff
            hi_[1:] = soc.vec_const
            G_soc.append(Gi)
            h_soc.append(hi_)
            socs.append(d)
        G = np.vstack([G_lin] + G_soc) if G_soc else G_lin
        h = np.concatenate([h_lin] + h_soc) if h_soc else h_lin
        compiled = _Compiled(P=P, q=q, const=const, G=G, h=h,
                             cone=Cone(G_lin.shape[0], socs))
        self._compiled = compiled
        return compiled

    # ---- diagnostics ----

    def point_violation(self, x: np.ndarray) -> float:
        """Largest constraint violation of a candidate point (0 if feasible)."""
        comp = getattr(self, "_compiled", None) or self.compile()
        viol = 0.0
        if self.eq_coeff is not None and self.eq_coeff.size:
            viol = float(np.max(np.abs(self.eq_coeff @ x - self.eq_rhs)))
        svec = comp.h - comp.G @ x
        return max(viol, -comp.cone.min_eig(svec))

    def objective_value(self, x: np.ndarray) -> float:
        comp = getattr(self, "_compiled", None) or self.compile()
        return float(0.5 * x @ (comp.P @ x) + comp.q @ x + comp.const)

    # ---- interchange ----

    def to_json(self) -> str:
        comp = getattr(self, "_compiled", None) or self.compile()
        payload = {
            "variables": self.layout.blocks(),
            "objective": {
                "quadratic": comp.P.tolist(),
                "linear": comp.q.tolist(),
                "constant": comp.const,
            },
            "equalities": {
                "coeff": [] if self.eq_coeff is None else self.eq_coeff.tolist(),
                "rhs": [] if self.eq_rhs is None else self.eq_rhs.tolist(),
            },
            "cone": {"nonneg": comp.cone.nonneg, "soc_dims": comp.cone.socs},
            "G": comp.G.tolist(),
            "h": comp.h.tolist(),
        }
        return json.dumps(payload, indent=2)


@dataclass
class _Compiled:
    P: np.ndarray
    q: np.ndarray
    const: float
    G: np.ndarray
    h: np.ndarray
    cone: Cone


@dataclass
class ConicSolution:
    """Solve outcome: status, primal values per block, and solver statistics."""

    status: str
    primal: dict
    objective: float
    iterations: int
    solve_time: float
    primal_residual: float
    dual_residual: float
    gap: float
    x: np.ndarray = field(repr=False, default=None)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def solve(program: ConicProgram, tolerance: float = 1e-8, maxiter: int = 200,
          backend: str = "auto") -> ConicSolution:
    """Solve the program; backend is "embedded", "clarabel", or "auto"."""
    from .backends import solve_standard_form

    comp = getattr(program, "_compiled", None) or program.compile()
    A = program.eq_coeff if program.eq_coeff is not None else np.zeros((0, program.layout.size))
    b = program.eq_rhs if program.eq_rhs is not None else np.zeros(0)
    if not hasattr(comp, "workspace"):
        comp.workspace = {}
    t0 = time.perf_counter()
    res = solve_standard_form(comp.P, comp.q, A, b, comp.G, comp.h, comp.cone,
                              tol=tolerance, maxiter=maxiter, backend=backend,
                              workspace=comp.workspace)
    elapsed = time.perf_counter() - t0
    status = res.status
    if status not in ("optimal", "infeasible"):
        status = "numerical_failure"
    return ConicSolution(status=status,
                         primal=program.layout.split(res.x),
                         objective=res.objective + comp.const,
                         iterations=res.iterations,
                         solve_time=elapsed,
                         primal_residual=res.primal_residual,
                         dual_residual=res.dual_residual,
                         gap=res.gap,
                         x=res.x)
