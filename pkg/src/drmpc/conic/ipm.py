"""Embedded primal-dual interior-point method for quadratic-objective SOCPs.

Solves
    minimize    0.5 x'Px + q'x
    subject to  Ax = b,
                Gx + s = h,   s in K,
where K is a product of a nonnegative orthant and second-order cones.
Nesterov-Todd scaling with a Mehrotra predictor-corrector step and one
iterative-refinement pass per solve direction.  Problems here have tens of
variables and a few hundred cone rows, so the scaling operators are
materialized as small dense matrices each iteration; cone bookkeeping is
vectorized over groups of equal-dimension cones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_STEP_FRACTION = 0.99
_MIN_SOC_DIM = 2


class Cone:
    """Product cone: `nonneg` orthant rows followed by SOC blocks `socs`."""

    def __init__(self, nonneg: int, socs=()):
        self.nonneg = int(nonneg)
        self.socs = [int(d) for d in socs]
        if self.nonneg < 0 or any(d < _MIN_SOC_DIM for d in self.socs):
            raise ValueError("invalid cone specification")
        self.size = self.nonneg + sum(self.socs)
        self.degree = self.nonneg + len(self.socs)
        by_dim: dict[int, list[int]] = {}
        off = self.nonneg
        for d in self.socs:
            by_dim.setdefault(d, []).append(off)
            off += d
        # (dim, (count, dim) index array) per group of equal-dimension cones
        self.groups = [(d, np.asarray(offs)[:, None] + np.arange(d)[None, :])
                       for d, offs in by_dim.items()]
        # scatter indices for writing (count, d, d) blocks into (m, m) matrices
        self.block_scatter = [(idx[:, :, None], idx[:, None, :])
                              for _, idx in self.groups]

    def identity(self) -> np.ndarray:
        u = np.zeros(self.size)
        u[: self.nonneg] = 1.0
        for _, idx in self.groups:
            u[idx[:, 0]] = 1.0
        return u

    def min_eig(self, v: np.ndarray) -> float:
        out = np.inf
        if self.nonneg:
            out = min(out, float(np.min(v[: self.nonneg])))
        for _, idx in self.groups:
            blk = v[idx]
            eig = blk[:, 0] - np.sqrt(np.maximum((blk[:, 1:] ** 2).sum(axis=1), 0.0))
            out = min(out, float(eig.min()))
        return out

    def jprod(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.size)
        if self.nonneg:
            out[: self.nonneg] = u[: self.nonneg] * v[: self.nonneg]
        for _, idx in self.groups:
            ub, vb = u[idx], v[idx]
            out[idx[:, 0]] = (ub * vb).sum(axis=1)
            out[idx[:, 1:]] = ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
        return out

    def jdiv(self, lam: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Solve ``lam o u = d`` for u."""
        out = np.empty(self.size)
        if self.nonneg:
            out[: self.nonneg] = d[: self.nonneg] / lam[: self.nonneg]
        for _, idx in self.groups:
            lb, db = lam[idx], d[idx]
            det = lb[:, 0] ** 2 - (lb[:, 1:] ** 2).sum(axis=1)
            u0 = (lb[:, 0] * db[:, 0] - (lb[:, 1:] * db[:, 1:]).sum(axis=1)) / det
            out[idx[:, 0]] = u0
            out[idx[:, 1:]] = (db[:, 1:] - u0[:, None] * lb[:, 1:]) / lb[:, :1]
        return out

    def max_step(self, v: np.ndarray, dv: np.ndarray) -> float:
        """sup {a >= 0 : v + a dv in K} for v strictly interior."""
        amax = np.inf
        if self.nonneg:
            vl, dl = v[: self.nonneg], dv[: self.nonneg]
            neg = dl < 0
            if np.any(neg):
                amax = min(amax, float(np.min(-vl[neg] / dl[neg])))
        for _, idx in self.groups:
            vb, db = v[idx], dv[idx]
            ca = db[:, 0] ** 2 - (db[:, 1:] ** 2).sum(axis=1)
            cb = 2.0 * (vb[:, 0] * db[:, 0] - (vb[:, 1:] * db[:, 1:]).sum(axis=1))
            cc = np.maximum(vb[:, 0] ** 2 - (vb[:, 1:] ** 2).sum(axis=1), 0.0)
            steps = np.full(ca.shape, np.inf)
            lin = np.abs(ca) < 1e-300
            denom_lin = np.where(cb < 0, cb, -1.0)
            np.copyto(steps, -cc / denom_lin, where=lin & (cb < 0))
            disc = cb * cb - 4.0 * ca * cc
            has = (~lin) & (disc >= 0.0)
            if np.any(has):
                sq = np.sqrt(np.where(has, disc, 0.0))
                den = np.where(has, 2.0 * ca, 1.0)
                r1 = (-cb - sq) / den
                r2 = (-cb + sq) / den
                lo = np.minimum(r1, r2)
                hi = np.maximum(r1, r2)
                root = np.where(lo > 0, lo, np.where(hi > 0, hi, np.inf))
                np.copyto(steps, root, where=has)
            dneg = db[:, 0] < 0
            if np.any(dneg):
                top = -vb[:, 0] / np.where(dneg, db[:, 0], -1.0)
                steps = np.minimum(steps, np.where(dneg, top, np.inf))
            if steps.size:
                amax = min(amax, float(steps.min()))
        return amax


class _NTScaling:
    """Dense NT scaling operators W, W^{-1}, W^2, W^{-2} and lambda = W z."""

    def __init__(self, cone: Cone, s: np.ndarray, z: np.ndarray):
        self.cone = cone
        self.ok = True
        m = cone.size
        lam = np.empty(m)
        W = np.zeros((m, m))
        Wi = np.zeros((m, m))
        W2 = np.zeros((m, m))
        Wi2 = np.zeros((m, m))
        if cone.nonneg:
            sl, zl = s[: cone.nonneg], z[: cone.nonneg]
            if np.min(sl) <= 0 or np.min(zl) <= 0:
                self.ok = False
                return
            w = np.sqrt(sl / zl)
            rr = np.arange(cone.nonneg)
            W[rr, rr] = w
            Wi[rr, rr] = 1.0 / w
            W2[rr, rr] = w * w
            Wi2[rr, rr] = 1.0 / (w * w)
            lam[: cone.nonneg] = np.sqrt(sl * zl)
        for (d, idx), (srows, scols) in zip(cone.groups, cone.block_scatter):
            sb, zb = s[idx], z[idx]
            ns2 = sb[:, 0] ** 2 - (sb[:, 1:] ** 2).sum(axis=1)
            nz2 = zb[:, 0] ** 2 - (zb[:, 1:] ** 2).sum(axis=1)
            if np.min(ns2) <= 0 or np.min(nz2) <= 0:
                self.ok = False
                return
            ns, nz = np.sqrt(ns2), np.sqrt(nz2)
            sn = sb / ns[:, None]
            zn = zb / nz[:, None]
            gam = np.sqrt((1.0 + (sn * zn).sum(axis=1)) / 2.0)
            wb = sn.copy()
            wb[:, 0] += zn[:, 0]
            wb[:, 1:] -= zn[:, 1:]
            wb /= (2.0 * gam)[:, None]
            eta = np.sqrt(ns / nz)
            Jdiag = np.concatenate([[1.0], -np.ones(d - 1)])
            eye_rest = np.eye(d - 1)

            def vmat(w):
                # batched V(w): (k, d, d) square roots of 2ww' - J
                k = w.shape[0]
                V = np.empty((k, d, d))
                V[:, 0, 0] = w[:, 0]
                V[:, 0, 1:] = w[:, 1:]
                V[:, 1:, 0] = w[:, 1:]
                V[:, 1:, 1:] = eye_rest + (w[:, 1:, None] * w[:, None, 1:]
                                           / (1.0 + w[:, 0])[:, None, None])
                return V

            jwb = wb * Jdiag
            V = vmat(wb)
            Vj = vmat(jwb)
            Hb = 2.0 * wb[:, :, None] * wb[:, None, :] - np.diag(Jdiag)
            Hbj = 2.0 * jwb[:, :, None] * jwb[:, None, :] - np.diag(Jdiag)
            W[srows, scols] = eta[:, None, None] * V
            Wi[srows, scols] = Vj / eta[:, None, None]
            W2[srows, scols] = (eta ** 2)[:, None, None] * Hb
            Wi2[srows, scols] = Hbj / (eta ** 2)[:, None, None]
            lam[idx] = eta[:, None] * np.einsum("kij,kj->ki", V, zb)
        self.W = W
        self.Wi = Wi
        self.W2 = W2
        self.Wi2 = Wi2
        self.lam = lam


@dataclass
class IPMResult:
    status: str
    x: np.ndarray
    y: np.ndarray = field(repr=False, default=None)
    z: np.ndarray = field(repr=False, default=None)
    s: np.ndarray = field(repr=False, default=None)
    objective: float = np.nan
    iterations: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    gap: float = np.inf


def solve_coneqp(P, q, A, b, G, h, cone: Cone, tol: float = 1e-8,
                 maxiter: int = 100) -> IPMResult:
    """Primal-dual path following with NT scaling and Mehrotra correction."""
    q = np.asarray(q, dtype=float)
    n = q.size
    if A is None or (hasattr(A, "size") and A.size == 0):
        A = np.zeros((0, n))
        b = np.zeros(0)
    p = A.shape[0]
    e = cone.identity()

    # objective equilibration keeps the KKT blocks on a common scale
    obj_scale = max(1.0, float(np.max(np.abs(P))) if P.size else 1.0,
                    float(np.max(np.abs(q))) if q.size else 1.0)
    Ps = P / obj_scale
    qs = q / obj_scale

    bnrm = max(1.0, np.linalg.norm(b))
    hnrm = max(1.0, np.linalg.norm(h))
    qnrm = max(1.0, np.linalg.norm(qs))

    K0 = np.zeros((n + p, n + p))
    K0[:n, :n] = Ps + G.T @ G + 1e-12 * np.eye(n)
    K0[:n, n:] = A.T
    K0[n:, :n] = A
    rhs0 = np.concatenate([-qs + G.T @ h, b])
    try:
        sol = np.linalg.solve(K0, rhs0)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K0, rhs0, rcond=None)[0]
    x = sol[:n]
    y = sol[n:]
    st = h - G @ x
    ap = -cone.min_eig(st)
    s = st.copy() if ap < 0 else st + (1.0 + ap) * e
    zt = -st
    ad = -cone.min_eig(zt)
    z = zt.copy() if ad < 0 else zt + (1.0 + ad) * e

    gap0 = max(s @ z, 1.0)
    best = None
    stall = 0

    def result(status, xv, yv, zv, sv, iters, pres, dres, gap):
        obj = 0.5 * xv @ (P @ xv) + q @ xv
        return IPMResult(status=status, x=xv, y=yv * obj_scale, z=zv * obj_scale,
                         s=sv, objective=float(obj), iterations=iters,
                         primal_residual=float(pres), dual_residual=float(dres),
                         gap=float(gap * obj_scale))

    pres = dres = gap = np.inf
    GT = np.ascontiguousarray(G.T)
    for it in range(maxiter):
        rx = Ps @ x + qs + A.T @ y + GT @ z
        ry = A @ x - b
        rz = G @ x + s - h
        gap = s @ z
        mu = gap / cone.degree
        pcost = 0.5 * x @ (Ps @ x) + qs @ x
        pres = max(np.linalg.norm(ry) / bnrm, np.linalg.norm(rz) / hnrm)
        dres = np.linalg.norm(rx) / qnrm
        relgap = gap / max(1.0, abs(pcost))
        if not (np.isfinite(pres) and np.isfinite(dres) and np.isfinite(gap)):
            break
        metric = max(pres, dres, min(gap, relgap))
        if best is None or metric < 0.9 * best[0]:
            best = (metric, x.copy(), y.copy(), z.copy(), s.copy(), pres, dres, gap)
            stall = 0
        else:
            stall += 1
        if pres <= tol and dres <= tol and (gap <= tol or relgap <= tol):
            return result("optimal", x, y, z, s, it, pres, dres, gap)
        if stall >= 8:
            break
        if mu < 1e-10 * gap0 / cone.degree and pres > np.sqrt(tol):
            return result("infeasible", x, y, z, s, it, pres, dres, gap)

        sc = _NTScaling(cone, s, z)
        if not sc.ok:
            break
        lam = sc.lam
        lam_lam = cone.jprod(lam, lam)
        WiG = sc.Wi @ G
        H = Ps + WiG.T @ WiG
        delta = 1e-13 * max(1.0, np.trace(H) / max(n, 1))
        KKi = None
        for _ in range(4):
            KK = np.zeros((n + p, n + p))
            KK[:n, :n] = H + delta * np.eye(n)
            KK[:n, n:] = A.T
            KK[n:, :n] = A
            if p:
                KK[n:, n:] = -delta * np.eye(p)
            try:
                cand = np.linalg.inv(KK)
            except np.linalg.LinAlgError:
                delta *= 1e4
                continue
            if np.all(np.isfinite(cand)):
                KKi = cand
                break
            delta *= 1e4
        if KKi is None:
            break

        def directions(dc):
            rhs_z = -rz - sc.W @ cone.jdiv(lam, dc)
            rr = np.concatenate([-rx + WiG.T @ (sc.Wi @ rhs_z), -ry])
            dd = KKi @ rr
            dx, dy = dd[:n], dd[n:]
            dz = sc.Wi2 @ (G @ dx - rhs_z)
            # refine against the full KKT residual; second pass only if needed
            for attempt in range(2):
                r1 = -rx - (Ps @ dx + A.T @ dy + GT @ dz)
                r2 = -ry - A @ dx
                r3 = rhs_z - (G @ dx - sc.W2 @ dz)
                err = max(np.max(np.abs(r1)), np.max(np.abs(r2)) if p else 0.0,
                          np.max(np.abs(r3)))
                if attempt == 1 and err < 1e-10:
                    break
                de = KKi @ np.concatenate([r1 + WiG.T @ (sc.Wi @ r3), r2])
                dx = dx + de[:n]
                dy = dy + de[n:]
                dz = sc.Wi2 @ (G @ dx - rhs_z)
            ds = -rz - G @ dx
            return dx, dy, dz, ds, sc.Wi @ ds, sc.W @ dz

        dxa, dya, dza, dsa, dsta, dzta = directions(-lam_lam)
        if not np.all(np.isfinite(dxa)):
            break
        a_aff = min(1.0, cone.max_step(lam, dsta), cone.max_step(lam, dzta))
        gap_aff = (s + a_aff * dsa) @ (z + a_aff * dza)
        sigma = min(1.0, max(0.0, gap_aff / gap)) ** 3
        if stall >= 3:
            # progress has flattened; take a strongly centered step to move
            # the iterate off the degenerate face before pushing on
            sigma = max(sigma, 0.5)

        dc = sigma * mu * e - lam_lam - cone.jprod(dsta, dzta)
        dx, dy, dz, ds, dst, dzt = directions(dc)
        if not np.all(np.isfinite(dx)):
            break
        amax = min(cone.max_step(lam, dst), cone.max_step(lam, dzt))
        alpha = min(1.0, _STEP_FRACTION * amax)
        for _ in range(40):
            if (cone.min_eig(s + alpha * ds) > 0.0
                    and cone.min_eig(z + alpha * dz) > 0.0):
                break
            alpha *= 0.8
        else:
            break
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz

    if best is None:
        return result("numerical_failure", x, y, z, s, maxiter, pres, dres, gap)
    metric, xb, yb, zb, sb, pres, dres, gap = best
    pcost_b = 0.5 * xb @ (Ps @ xb) + qs @ xb
    # degenerate faces can pin the duality gap one or two orders above the
    # target while the primal iterate is already solid; classify such points
    # as optimal with the achieved residuals reported alongside
    if pres <= tol and dres <= 10 * tol and (
            gap <= tol or gap / max(1.0, abs(pcost_b)) <= 100 * tol):
        return result("optimal", xb, yb, zb, sb, maxiter, pres, dres, gap)
    if _farkas_certificate(A, b, G, h, cone, y, z) \
            or _farkas_certificate(A, b, G, h, cone, yb, zb):
        return result("infeasible", xb, yb, zb, sb, maxiter, pres, dres, gap)
    return result("numerical_failure", xb, yb, zb, sb, maxiter, pres, dres, gap)


def _farkas_certificate(A, b, G, h, cone: Cone, y, z) -> bool:
    """Certify primal infeasibility from a dual ray candidate.

    Projects (y, z) onto the null space of [A' G'], then checks the Farkas
    conditions: projected z stays (nearly) in the dual cone and the
    certificate value b'y + h'z is strictly negative.
    """
    stack = np.vstack([A, G])            # (p+m) x n, certificate needs stack' v = 0
    v = np.concatenate([y, z])
    nrm = np.linalg.norm(v)
    if nrm <= 0:
        return False
    coef, *_ = np.linalg.lstsq(stack.T, stack.T @ v, rcond=None)
    v_proj = v - coef
    p = A.shape[0]
    yp, zp = v_proj[:p], v_proj[p:]
    nrm_p = np.linalg.norm(v_proj)
    if nrm_p < 1e-8 * nrm:
        return False
    yp = yp / nrm_p
    zp = zp / nrm_p
    residual = np.linalg.norm(A.T @ yp + G.T @ zp)
    value = b @ yp + h @ zp
    return (residual < 1e-9 and value < -1e-7
            and cone.min_eig(zp) > -1e-9)
