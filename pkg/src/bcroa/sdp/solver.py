"""Primal-dual interior-point method for block-diagonal SDPs.

Infeasible-start path following with Nesterov-Todd scaling and a Mehrotra
predictor-corrector, in the spirit of SDPT3. For a problem in the form of
:class:`~bcroa.sdp.problem.SdpProblem` the Newton system reduces to the Schur
complement ``M dy = r`` with ``M_ij = tr(A_i W A_j W)``, where ``W`` is the NT
scaling matrix (``W Z W = X``).

Blocks are handled independently; each block contributes to the rows and
columns of ``M`` belonging to the variables that touch it. Constraint
matrices produced by SOS compilation carry only a few nonzeros each, so the
block contribution is assembled from the nonzero entries when that is cheaper
than the dense product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .problem import SdpProblem, SdpSolution


@dataclass
class SdpOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-9
    accept_gap: float = 1e-6
    accept_res: float = 1e-7
    inf_tol: float = 1e-8
    max_iter: int = 100
    step_frac: float = 0.98
    verbose: bool = False


class _Block:
    """Constraint data restricted to one block."""

    def __init__(self, p: SdpProblem, j: int):
        self.n = p.block_sizes[j]
        self.idx = np.array(p.vars_in_block(j), dtype=np.int64) - 1
        self.C = p.block(0, j)
        k = self.idx.size
        self.A = np.stack([p.mats[(i + 1, j)] for i in self.idx]) if k else np.zeros((0, self.n, self.n))
        owner, rows, cols = np.nonzero(self.A)
        self.nnz = owner.size
        self.vals = self.A[owner, rows, cols]
        self.rows, self.cols = rows, cols
        self.S = sp.csr_matrix((self.vals, (owner, np.arange(self.nnz))), shape=(k, self.nnz))
        self.Aflat = self.A.reshape(k, self.n * self.n)
        dense_cost = k * self.n ** 3 + k * k * self.n ** 2
        self.use_sparse = self.nnz ** 2 < dense_cost
        self.Anorm = np.sqrt(np.sum(self.Aflat ** 2, axis=1)) if k else np.zeros(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.Aflat @ X.ravel()

    def adjoint(self, yb: np.ndarray) -> np.ndarray:
        if yb.size == 0:
            return np.zeros((self.n, self.n))
        return (yb @ self.Aflat).reshape(self.n, self.n)

    def schur(self, W: np.ndarray) -> np.ndarray:
        if self.idx.size == 0:
            return np.zeros((0, 0))
        if self.use_sparse:
            Wqp = W[np.ix_(self.cols, self.rows)]
            ST = self.S @ (Wqp * Wqp.T)
            return np.asarray(self.S @ ST.T)
        G = np.matmul(W, np.matmul(self.A, W))
        return self.Aflat @ G.reshape(self.idx.size, self.n * self.n).T


def _nt_scaling(X: np.ndarray, Z: np.ndarray):
    Lx = np.linalg.cholesky(X)
    Lz = np.linalg.cholesky(Z)
    U, s, Vt = np.linalg.svd(Lz.T @ Lx)
    R = Lx @ Vt.T / np.sqrt(s)
    return R, s


def _max_step(lam: np.ndarray, dM: np.ndarray) -> float:
    """Largest alpha with ``diag(lam) + alpha dM`` psd."""
    d = 1.0 / np.sqrt(lam)
    ev = np.linalg.eigvalsh((dM * d[:, None]) * d[None, :])
    mn = ev.min() if ev.size else 0.0
    return np.inf if mn >= 0 else -1.0 / mn


def solve(p: SdpProblem, opts: SdpOptions | None = None) -> SdpSolution:
    """Solve ``p`` by primal-dual path following.

    Returns
    -------
    SdpSolution
        ``status`` is ``optimal``, ``infeasible`` (no psd ``X`` meets the
        equalities), ``unbounded`` (the LMI form is infeasible), ``max_iter``
        or ``numerical_failure``.
    """
    opts = opts or SdpOptions()
    p.validate()
    m = p.m
    b = p.b
    blocks = [_Block(p, j) for j in range(p.num_blocks)]
    n_tot = sum(p.block_sizes)
    bnorm = float(np.linalg.norm(b))
    Cnorm = float(np.sqrt(sum(np.sum(bl.C ** 2) for bl in blocks)))

    def Aop(Xs):
        out = np.zeros(m)
        for bl, X in zip(blocks, Xs):
            if bl.idx.size:
                np.add.at(out, bl.idx, bl.apply(X))
        return out

    def ATop(y):
        return [bl.adjoint(y[bl.idx]) for bl in blocks]

    X, Z = [], []
    for bl in blocks:
        n = bl.n
        rt = np.sqrt(n)
        ratio = ((1.0 + np.abs(b[bl.idx])) / (1.0 + bl.Anorm)).max() if bl.idx.size else 0.0
        xi = max(10.0, rt, rt * ratio)
        eta = max(10.0, rt, bl.Anorm.max() if bl.idx.size else 0.0, float(np.linalg.norm(bl.C)))
        X.append(xi * np.eye(n))
        Z.append(eta * np.eye(n))
    y = np.zeros(m)

    history: list[dict] = []
    status = "max_iter"
    message = ""
    cert = None
    it = 0
    small_steps = 0
    stalled = False
    best = None          # (merit, X, y, Z) of the most accurate iterate so far
    worse = 0

    def metrics():
        rp = b - Aop(X)
        ATy = ATop(y)
        Rd = [bl.C + Zb - ATyb for bl, Zb, ATyb in zip(blocks, Z, ATy)]
        pobj = float(sum(np.sum(bl.C * Xb) for bl, Xb in zip(blocks, X)))
        dobj = float(b @ y)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        pres = float(np.linalg.norm(rp)) / (1.0 + bnorm)
        dres = float(np.sqrt(sum(np.sum(R ** 2) for R in Rd))) / (1.0 + Cnorm)
        absres = max(float(np.abs(rp).max()) if m else 0.0,
                     max((float(np.abs(R).max()) for R in Rd), default=0.0))
        return rp, Rd, ATy, pobj, dobj, gap, pres, dres, absres

    for it in range(opts.max_iter + 1):
        rp, Rd, ATy, pobj, dobj, gap, pres, dres, absres = metrics()
        mu = sum(float(np.sum(Xb * Zb)) for Xb, Zb in zip(X, Z)) / n_tot
        history.append({"iter": it, "pobj": pobj, "dobj": dobj, "gap": gap,
                        "pres": pres, "dres": dres, "mu": mu})
        if opts.verbose:
            print(f"{it:3d} p={pobj: .8e} d={dobj: .8e} gap={gap:.2e} pres={pres:.2e} dres={dres:.2e}")
        if gap <= opts.gap_tol and pres <= opts.feas_tol and dres <= opts.feas_tol:
            status = "optimal"
            break
        merit = max(gap, pres, dres)
        if best is None or merit < best[0]:
            best = (merit, [x.copy() for x in X], y.copy(), [z.copy() for z in Z])
            worse = 0
        elif merit > 10.0 * best[0] and best[0] < 1e-4:
            # accuracy is being lost in a degenerate endgame
            worse += 1
            if worse >= 3:
                status, message = "numerical_failure", f"accuracy deteriorated after iteration {it - 3}"
                break
        # improving rays
        if dobj < 0:
            ray = float(np.sqrt(sum(np.sum((a - zb) ** 2) for a, zb in zip(ATy, Z)))) / -dobj
            if ray < opts.inf_tol and pres > opts.feas_tol:
                status, cert = "infeasible", float(np.linalg.norm(y)) / -dobj
                message = f"primal infeasibility ray, residual {ray:.2e}"
                break
        if pobj > 0:
            ray = float(np.linalg.norm(Aop(X))) / pobj
            if ray < opts.inf_tol and dres > opts.feas_tol:
                status = "unbounded"
                cert = float(np.sqrt(sum(np.sum(Xb ** 2) for Xb in X))) / pobj
                message = f"LMI infeasibility ray, residual {ray:.2e}"
                break
        if it == opts.max_iter:
            break
        try:
            scal = [_nt_scaling(Xb, Zb) for Xb, Zb in zip(X, Z)]
        except np.linalg.LinAlgError:
            status, message = "numerical_failure", f"iterate lost definiteness at iteration {it}"
            break
        Ws = [R @ R.T for R, _ in scal]
        M = np.zeros((m, m))
        for bl, W in zip(blocks, Ws):
            if bl.idx.size:
                M[np.ix_(bl.idx, bl.idx)] += bl.schur(W)
        M = 0.5 * (M + M.T)
        WRdW = [W @ R @ W for W, R in zip(Ws, Rd)]
        base = Aop(WRdW) - rp

        factor = None
        if m:
            dmax = float(np.max(np.abs(np.diag(M)))) or 1.0
            # degenerate problems lose Schur definiteness near the optimum;
            # a small diagonal shift keeps the Newton system solvable
            for shift in (0.0, 1e-14, 1e-12, 1e-10, 1e-8):
                try:
                    Ms = M if shift == 0.0 else M + shift * dmax * np.eye(m)
                    factor = sla.cho_factor(Ms, check_finite=False)
                    break
                except (np.linalg.LinAlgError, ValueError):
                    factor = None

        def schur_solve(rhs):
            if m == 0:
                return np.zeros(0)
            if factor is not None:
                return sla.cho_solve(factor, rhs, check_finite=False)
            sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
            return sol

        def direction(Hs):
            RHR = [R @ H @ R.T for (R, _), H in zip(scal, Hs)]
            dy = schur_solve(Aop(RHR) + base)
            ATdy = ATop(dy)
            dZ = [a - r for a, r in zip(ATdy, Rd)]
            dZt = [R.T @ d @ R for (R, _), d in zip(scal, dZ)]
            dZt = [0.5 * (d + d.T) for d in dZt]
            dXt = [H - d for H, d in zip(Hs, dZt)]
            return dy, dXt, dZt, dZ

        def steps(dXt, dZt):
            ap = min([_max_step(lam, d) for (_, lam), d in zip(scal, dXt)] + [np.inf])
            ad = min([_max_step(lam, d) for (_, lam), d in zip(scal, dZt)] + [np.inf])
            return min(1.0, opts.step_frac * ap), min(1.0, opts.step_frac * ad)

        H_aff = [-np.diag(lam) for _, lam in scal]
        dy_a, dXt_a, dZt_a, _ = direction(H_aff)
        ap, ad = steps(dXt_a, dZt_a)
        mu_aff = sum(float(np.sum((np.diag(lam) + ap * dx) * (np.diag(lam) + ad * dz)))
                     for (_, lam), dx, dz in zip(scal, dXt_a, dZt_a)) / n_tot
        sigma = min(1.0, max(0.0, mu_aff / mu) ** 3) if mu > 0 else 0.0

        H_cor = []
        for (_, lam), dx, dz in zip(scal, dXt_a, dZt_a):
            P = dx @ dz
            denom = lam[:, None] + lam[None, :]
            H = -(P + P.T) / denom
            H[np.diag_indices_from(H)] += sigma * mu / lam - lam
            H_cor.append(H)
        dy, dXt, dZt, dZ = direction(H_cor)
        ap, ad = steps(dXt, dZt)
        if factor is None and m:
            # lstsq fallbacks must still reduce the residual, otherwise give up
            chk = M @ dy - (Aop([R @ H @ R.T for (R, _), H in zip(scal, H_cor)]) + base)
            if not np.all(np.isfinite(dy)) or np.linalg.norm(chk) > 1e-6 * (1 + np.linalg.norm(base)):
                status = "numerical_failure"
                message = f"Schur complement singular at iteration {it} (cond ~ {np.linalg.cond(M):.2e})"
                break

        for j, ((R, _), dx, dz) in enumerate(zip(scal, dXt, dZ)):
            Xn = X[j] + ap * (R @ dx @ R.T)
            Zn = Z[j] + ad * dz
            X[j] = 0.5 * (Xn + Xn.T)
            Z[j] = 0.5 * (Zn + Zn.T)
        y = y + ad * dy
        if max(ap, ad) < 1e-10:
            small_steps += 1
            if small_steps >= 3:
                message = f"step lengths stalled at iteration {it}"
                stalled = True
                break
        else:
            small_steps = 0

    rp, Rd, ATy, pobj, dobj, gap, pres, dres, absres = metrics()
    if status in ("max_iter", "numerical_failure") and best is not None \
            and max(gap, pres, dres) > best[0]:
        X, y, Z = best[1], best[2], best[3]
        rp, Rd, ATy, pobj, dobj, gap, pres, dres, absres = metrics()
    if status in ("max_iter", "numerical_failure") or stalled:
        if gap <= opts.accept_gap and absres <= opts.accept_res:
            status = "optimal"
        elif stalled:
            status = "numerical_failure"
    return SdpSolution(status=status, X=[x.copy() for x in X], y=y.copy(), Z=[z.copy() for z in Z],
                       primal_objective=pobj, dual_objective=dobj, gap=gap, max_residual=absres,
                       iterations=it, message=message, certificate_norm=cert, history=history)
