"""Primal-dual interior-point method for nonneg x SOC x PSD cone programs.

Homogeneous self-dual embedding with Nesterov-Todd scaling and a Mehrotra
predictor-corrector.  Standard form

    minimize c'x  s.t.  A x = b,  x_F free,  x_K in K

with dual  maximize b'y  s.t.  A'y + z = c,  z_F = 0,  z_K in K.
The Newton systems are reduced to a dense bordered system in (dy, dx_F).
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
import scipy.linalg as sla

from .cones import Dims, NTScaling, identity, jordan, jordan_solve, max_step
from .problem import ConicProblem, ConicSolution, Status, Tolerances

log = logging.getLogger(__name__)

STEP_FRACTION = 0.99
# give up after this many iterations without a 2x improvement of the score
STALL_ITERS = 15
STALL_FACTOR = 0.5
# iterate towards POLISH * tolerance while progress lasts; once the requested
# tolerances hold, stop after POLISH_ITERS iterations without improvement
POLISH = 1e-2
POLISH_ITERS = 2


def _canonical_order(problem: ConicProblem):
    """Permutation taking declared variable order to canonical cone order."""
    offs = problem.offsets()
    groups = {"free": [], "nonneg": [], "soc": [], "psd": []}
    for blk, off in zip(problem.blocks, offs):
        groups[blk.kind].append((blk, off))
    perm = []
    for kind in ("free", "nonneg", "soc", "psd"):
        for blk, off in groups[kind]:
            perm.extend(range(off, off + blk.length))
    dims = Dims(
        free=sum(b.size for b, _ in groups["free"]),
        nonneg=sum(b.size for b, _ in groups["nonneg"]),
        soc=tuple(b.size for b, _ in groups["soc"]),
        psd=tuple(b.size for b, _ in groups["psd"]),
    )
    return np.array(perm, dtype=int), dims


def _independent_rows(A: np.ndarray, b: np.ndarray):
    """Indices of a maximal independent row subset; None if A x = b is
    inconsistent."""
    p = A.shape[0]
    if p == 0:
        return np.arange(0)
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0) * 10
    rank = int(np.sum(diag > tol))
    keep = np.sort(piv[:rank])
    if rank < p:
        sol, *_ = np.linalg.lstsq(A[keep], b[keep], rcond=None)
        resid = A @ sol - b
        if np.linalg.norm(resid) > 1e-8 * (1.0 + np.linalg.norm(b)):
            return None
    return keep


def solve(problem: ConicProblem, tolerances: Tolerances | None = None) -> ConicSolution:
    """Solve a :class:`ConicProblem`; never raises on solver failure, the
    outcome is reported in ``status``."""
    tol = tolerances or Tolerances()
    perm, dims = _canonical_order(problem)
    c0 = problem.c[perm]
    A0 = problem.A.toarray()[:, perm]
    b0 = problem.b.copy()
    p0, n = A0.shape

    def finish(status, x, y, z, it, hist, metrics=None):
        xo = np.empty(n)
        xo[perm] = x
        zo = np.empty(n)
        zo[perm] = z
        m = metrics or _metrics(A0, b0, c0, x, y, z)
        return ConicSolution(
            status=status, x=xo, y=y, z=zo,
            objective=m["pobj"] + problem.offset,
            dual_objective=m["dobj"] + problem.offset,
            duality_gap=m["gap"], primal_residual=m["pres"], dual_residual=m["dres"],
            iterations=it, blocks=list(problem.blocks), history=hist)

    keep = _independent_rows(A0, b0)
    if keep is None:
        nan = np.full(n, np.nan)
        return finish(Status.INFEASIBLE, nan, np.full(p0, np.nan), nan, 0, [],
                      dict(pobj=np.inf, dobj=np.inf, gap=np.inf, pres=np.inf, dres=np.inf))

    # row equilibration and data scaling; iterates are mapped back on exit
    A = A0[keep]
    b = b0[keep]
    rnorm = np.abs(A).max(axis=1) if A.size else np.ones(0)
    rnorm[rnorm == 0] = 1.0
    A = A / rnorm[:, None]
    b = b / rnorm
    bscale = max(1.0, np.abs(b).max() if b.size else 0.0)
    cscale = max(1.0, np.abs(c0).max() if c0.size else 0.0)
    b = b / bscale
    c = c0 / cscale

    def unscale(x, y, z, tau):
        xs = x * (bscale / tau)
        yk = y * (cscale / tau) / rnorm
        yfull = np.zeros(p0)
        yfull[keep] = yk
        zs = z * (cscale / tau)
        return xs, yfull, zs

    nF = dims.free
    AF, AK = A[:, :nF], A[:, nF:]
    cF, cK = c[:nF], c[nF:]
    e = identity(dims)
    nu = dims.degree

    xF = np.zeros(nF)
    xK = e.copy()
    zK = e.copy()
    y = np.zeros(A.shape[0])
    tau, kappa = 1.0, 1.0
    hist: list[dict] = []
    status = Status.MAX_ITERS
    it = 0
    best = None
    stalled = 0

    for it in range(tol.max_iters + 1):
        x = np.concatenate([xF, xK])
        z = np.concatenate([np.zeros(nF), zK])
        rp = A @ x - b * tau
        rd = A.T @ y + z - c * tau
        rg = c @ x - b @ y + kappa
        mu = (xK @ zK + tau * kappa) / (nu + 1)

        xs, ys, zs = unscale(x, y, z, tau)
        m = _metrics(A0, b0, c0, xs, ys, zs)
        m.update(iter=it, mu=mu, tau=tau, kappa=kappa, compl=float(xs @ zs))
        hist.append(m)
        log.debug("ipm %3d pobj %.9e dobj %.9e gap %.2e pres %.2e dres %.2e",
                  it, m["pobj"], m["dobj"], m["gap"], m["pres"], m["dres"])
        score = max(m["gap"], m["pres"], m["dres"])
        if best is None or score < best[0]:
            if best is None or score < STALL_FACTOR * best[0]:
                stalled = 0
            best = (score, xs, ys, zs, it, m)
        stalled += 1
        if _converged(m, tol, POLISH):
            status = Status.OPTIMAL
            break
        if stalled > (POLISH_ITERS if _converged(best[5], tol) else STALL_ITERS):
            log.debug("ipm stagnated at iteration %d", it)
            status = Status.NUMERICAL_FAILURE
            break
        # infeasibility certificates
        by = b @ y
        if by > 0 and np.linalg.norm(A.T @ y + z) / by <= tol.feas_tol and tau < kappa:
            status = Status.INFEASIBLE
            break
        cx = c @ x
        if cx < 0 and np.linalg.norm(A @ x) / -cx <= tol.feas_tol and tau < kappa:
            status = Status.UNBOUNDED
            break
        if it == tol.max_iters:
            break

        try:
            W = NTScaling(dims, xK, zK)
            lam = W.lam
            hblocks = list(W.hessian_blocks())
            HAt = np.empty_like(AK.T)
            for kind, sl, H in hblocks:
                if kind == "nonneg":
                    HAt[sl] = H[:, None] * AK[:, sl].T
                else:
                    HAt[sl] = H @ AK[:, sl].T
            M = AK @ HAt
            K = np.block([[M, AF], [AF.T, np.zeros((nF, nF))]])
            # symmetric diagonal equilibration keeps the border rows accurate
            # when the cone block grows like 1/mu near the optimum
            dk_ = np.sqrt(np.maximum(np.abs(K).max(axis=1, initial=0.0), 1e-300))
            dsc = 1.0 / dk_
            Ks = K * dsc[:, None] * dsc[None, :]
            reg = 1e-14
            Kr = Ks.copy()
            Kr[: M.shape[0], : M.shape[0]] += reg * np.eye(M.shape[0])
            Kr[M.shape[0]:, M.shape[0]:] -= reg * np.eye(nF)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                lu = sla.lu_factor(Kr, check_finite=True) if Kr.size else None

            def ksolve(rhs):
                if lu is None:
                    return np.zeros(0)
                rs = rhs * dsc
                sol = sla.lu_solve(lu, rs)
                for _ in range(5):
                    r = rs - Ks @ sol
                    if np.abs(r).max(initial=0.0) <= 1e-15 * (1 + np.abs(rs).max(initial=0.0)):
                        break
                    sol = sol + sla.lu_solve(lu, r)
                return sol * dsc

            pdim = A.shape[0]
            rdF, rdK = rd[:nF], rd[nF:]
            sol1 = ksolve(np.concatenate([b + AK @ _hmul(hblocks, cK), cF]))
            dy1, dxF1 = sol1[:pdim], sol1[pdim:]
            dxK1 = _hmul(hblocks, AK.T @ dy1 - cK)
            den = cF @ dxF1 + cK @ dxK1 - b @ dy1 - kappa / tau

            def direction(eta, ds, dk):
                u = W.apply(jordan_solve(dims, lam, ds), "Wt")
                rhs = np.concatenate([-eta * rp - AK @ u - eta * (AK @ _hmul(hblocks, rdK)), -eta * rdF])
                sol0 = ksolve(rhs)
                dy0, dxF0 = sol0[:pdim], sol0[pdim:]
                dxK0 = u + _hmul(hblocks, eta * rdK + AK.T @ dy0)
                dtau = (-eta * rg - dk / tau - cF @ dxF0 - cK @ dxK0 + b @ dy0) / den
                dy = dy0 + dtau * dy1
                dxF = dxF0 + dtau * dxF1
                dxK = dxK0 + dtau * dxK1
                dzK = -eta * rdK - AK.T @ dy + cK * dtau
                dkap = (dk - kappa * dtau) / tau
                return dxF, dxK, dy, dzK, dtau, dkap

            def steplen(dxK, dzK, dtau, dkap):
                a = min(max_step(dims, lam, W.apply(dxK, "Winvt")),
                        max_step(dims, lam, W.apply(dzK, "W")))
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkap < 0:
                    a = min(a, -kappa / dkap)
                return a

            # predictor
            ds_a = -jordan(dims, lam, lam)
            dk_a = -tau * kappa
            aff = direction(1.0, ds_a, dk_a)
            alpha_a = min(1.0, steplen(aff[1], aff[3], aff[4], aff[5]))
            sigma = (1.0 - alpha_a) ** 3
            # corrector
            dxa = W.apply(aff[1], "Winvt")
            dza = W.apply(aff[3], "W")
            ds = ds_a - jordan(dims, dxa, dza) + sigma * mu * e
            dk = dk_a - aff[4] * aff[5] + sigma * mu
            dxF, dxK, dy, dzK, dtau, dkap = direction(1.0 - sigma, ds, dk)
            alpha = min(1.0, STEP_FRACTION * steplen(dxK, dzK, dtau, dkap))
            if not np.isfinite(alpha) or alpha <= 0:
                raise np.linalg.LinAlgError("no admissible step")
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            log.debug("ipm stopped at iteration %d: %s", it, exc)
            status = Status.NUMERICAL_FAILURE
            break

        xF = xF + alpha * dxF
        xK = xK + alpha * dxK
        y = y + alpha * dy
        zK = zK + alpha * dzK
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkap

    if status is Status.OPTIMAL:
        return finish(status, xs, ys, zs, it, hist, m)
    if status in (Status.INFEASIBLE, Status.UNBOUNDED):
        x = np.concatenate([xF, xK])
        z = np.concatenate([np.zeros(nF), zK])
        # return the normalized certificate rather than a meaningless point
        xo, yo, zo = unscale(x, y, z, 1.0)
        return finish(status, xo, yo, zo, it, hist, m)
    _, xs, ys, zs, bit, m = best
    if _converged(m, tol):
        # the tightened target was out of reach but the requested one was met
        status = Status.OPTIMAL
    return finish(status, xs, ys, zs, it, hist, m)


def _converged(m: dict, tol: Tolerances, factor: float = 1.0) -> bool:
    return (m["pres"] <= factor * tol.feas_tol and m["dres"] <= factor * tol.feas_tol
            and m["gap"] <= factor * tol.gap_tol)


def _hmul(hblocks, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    for kind, sl, H in hblocks:
        out[sl] = H * v[sl] if kind == "nonneg" else H @ v[sl]
    return out


def _inf(v: np.ndarray) -> float:
    return float(np.abs(v).max(initial=0.0))


def _metrics(A, b, c, x, y, z) -> dict:
    """Residuals relative to the size of the data and of the iterate
    (infinity norms), and the relative duality gap."""
    pobj = float(c @ x)
    dobj = float(b @ y)
    pres = _inf(A @ x - b) / max(1.0, _inf(b) + _inf(x))
    dres = _inf(A.T @ y + z - c) / max(1.0, _inf(c) + _inf(z))
    gap = abs(pobj - dobj) / max(1.0, abs(pobj))
    return dict(pobj=pobj, dobj=dobj, pres=pres, dres=dres, gap=gap)
