"""Pluggable solve backends behind the conic program contract.

The embedded interior-point method is always available and is the reference
implementation.  When the optional `clarabel` wheel (plus scipy for sparse
assembly) is importable, an adapter to it is offered as an accelerated
backend; both must pass the same conformance suite.
"""

from __future__ import annotations

import numpy as np

from .ipm import IPMResult, solve_coneqp

_HAVE_CLARABEL = None


def clarabel_available() -> bool:
    global _HAVE_CLARABEL
    if _HAVE_CLARABEL is None:
        try:
            import clarabel  # noqa: F401
            import scipy.sparse  # noqa: F401
            _HAVE_CLARABEL = True
        except ImportError:
            _HAVE_CLARABEL = False
    return _HAVE_CLARABEL


def resolve_backend(name: str) -> str:
    if name == "auto":
        return "clarabel" if clarabel_available() else "embedded"
    if name == "clarabel" and not clarabel_available():
        raise RuntimeError("clarabel backend requested but not importable")
    if name not in ("embedded", "clarabel"):
        raise ValueError(f"unknown backend {name!r}")
    return name


def solve_standard_form(P, q, A, b, G, h, cone, tol: float, maxiter: int,
                        backend: str = "auto", workspace: dict | None = None) -> IPMResult:
    name = resolve_backend(backend)
    if name == "embedded":
        return solve_coneqp(P, q, A, b, G, h, cone, tol=tol, maxiter=maxiter)
    return _solve_clarabel(P, q, A, b, G, h, cone, tol=tol, maxiter=maxiter,
                           workspace=workspace)


def _clarabel_workspace(P, q, A, G, cone, tol, maxiter):
    """Cacheable pieces: CSC matrices with a fixed pattern, cones, settings.

    The equality block occupies the leading rows with an explicitly dense
    pattern, so its entries sit first inside every CSC column and can be
    overwritten in place between solves.
    """
    import clarabel
    from scipy import sparse

    n = q.size
    p = A.shape[0]
    dense_eq = np.ones((p, n))
    stack = sparse.csc_matrix(np.vstack([dense_eq, G]))
    stack.sort_indices()
    eq_pos = (stack.indptr[:-1][None, :] + np.arange(p)[:, None]).ravel(order="F")
    cones = []
    if p:
        cones.append(clarabel.ZeroConeT(p))
    if cone.nonneg:
        cones.append(clarabel.NonnegativeConeT(cone.nonneg))
    for d in cone.socs:
        cones.append(clarabel.SecondOrderConeT(d))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int(maxiter)
    settings.tol_feas = tol
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    return {"P": sparse.csc_matrix(np.triu(P)), "stack": stack, "eq_pos": eq_pos,
            "cones": cones, "settings": settings, "tol": tol, "maxiter": maxiter}


def _solve_clarabel(P, q, A, b, G, h, cone, tol: float, maxiter: int,
                    workspace: dict | None = None) -> IPMResult:
    import clarabel

    n = q.size
    if A is None or (hasattr(A, "size") and A.size == 0):
        A = np.zeros((0, n))
        b = np.zeros(0)
    p = A.shape[0]
    key = (p, tol, maxiter)
    ws = None if workspace is None else workspace.get(key)
    if ws is None:
        ws = _clarabel_workspace(P, q, A, G, cone, tol, maxiter)
        if workspace is not None:
            workspace[key] = ws
    stack = ws["stack"]
    if p:
        stack.data[ws["eq_pos"]] = A.ravel(order="F")
    rhs = np.concatenate([b, h])
    solver = clarabel.DefaultSolver(ws["P"], q, stack, rhs, ws["cones"],
                                    ws["settings"])
    sol = solver.solve()
    status_name = str(sol.status)
    if status_name in ("SolverStatus.Solved", "Solved"):
        status = "optimal"
    elif "Infeasible" in status_name:
        status = "infeasible"
    elif "AlmostSolved" in status_name:
        status = "optimal" if _residual_ok(P, q, A, b, G, h, cone,
                                           np.asarray(sol.x), 10 * tol) \
            else "numerical_failure"
    else:
        status = "numerical_failure"
    x = np.asarray(sol.x, dtype=float)
    zfull = np.asarray(sol.z, dtype=float)
    sfull = np.asarray(sol.s, dtype=float)
    y = zfull[:p]
    z = zfull[p:]
    rz = G @ x + sfull[p:] - h if sfull.size else np.zeros(0)
    ry = A @ x - b
    rx = P @ x + q + A.T @ y + G.T @ z
    return IPMResult(status=status, x=x, y=y, z=z, s=sfull[p:],
                     objective=float(0.5 * x @ (P @ x) + q @ x),
                     iterations=int(sol.iterations),
                     primal_residual=float(max(
                         np.linalg.norm(ry) / max(1.0, np.linalg.norm(b)),
                         np.linalg.norm(rz) / max(1.0, np.linalg.norm(h)))),
                     dual_residual=float(np.linalg.norm(rx)
                                         / max(1.0, np.linalg.norm(q))),
                     gap=float(abs(sol.obj_val - sol.obj_val_dual)
                               if hasattr(sol, "obj_val_dual") else 0.0))


def _residual_ok(P, q, A, b, G, h, cone, x, tol) -> bool:
    ry = A @ x - b
    svec = h - G @ x
    return (np.linalg.norm(ry) <= tol * max(1.0, np.linalg.norm(b))
            and cone.min_eig(svec) >= -tol)
