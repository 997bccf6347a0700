"""Symmetric-cone primitives: svec storage, Jordan products, NT scaling.

PSD blocks are stored as ``svec``: the lower triangle in column-major order
with off-diagonal entries scaled by sqrt(2), so the Euclidean inner product
of two svec vectors equals the trace inner product of the matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

SQRT2 = np.sqrt(2.0)


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


@lru_cache(maxsize=None)
def _svec_index(n: int):
    rows, cols = [], []
    for j in range(n):
        for i in range(j, n):
            rows.append(i)
            cols.append(j)
    rows = np.array(rows)
    cols = np.array(cols)
    scale = np.where(rows == cols, 1.0, SQRT2)
    return rows, cols, scale


def svec(X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    rows, cols, scale = _svec_index(n)
    return X[rows, cols] * scale


def smat(v: np.ndarray) -> np.ndarray:
    d = v.shape[0]
    n = int(round((np.sqrt(8 * d + 1) - 1) / 2))
    rows, cols, scale = _svec_index(n)
    X = np.zeros((n, n))
    X[rows, cols] = v / scale
    X[cols, rows] = v / scale
    return X


def svec_entry(n: int, i: int, j: int) -> tuple[int, float]:
    """Position of entry (i, j) of an order-``n`` matrix inside svec, and the
    factor such that ``X[i, j] == factor * svec(X)[pos]``."""
    if i < j:
        i, j = j, i
    pos = j * n - j * (j - 1) // 2 + (i - j)
    return pos, (1.0 if i == j else 1.0 / SQRT2)


@lru_cache(maxsize=None)
def _svec_maps(n: int):
    """Dense maps vec(X) -> svec(X) and svec -> vec for symmetric X."""
    d = svec_dim(n)
    rows, cols, scale = _svec_index(n)
    S = np.zeros((d, n * n))
    Sp = np.zeros((n * n, d))
    for k, (i, j, s) in enumerate(zip(rows, cols, scale)):
        if i == j:
            S[k, i + j * n] = 1.0
            Sp[i + j * n, k] = 1.0
        else:
            S[k, i + j * n] = s / 2.0
            S[k, j + i * n] = s / 2.0
            Sp[i + j * n, k] = 1.0 / s
            Sp[j + i * n, k] = 1.0 / s
    return S, Sp


def congruence_matrix(R: np.ndarray) -> np.ndarray:
    """Matrix of the map X -> R^T X R in svec coordinates."""
    n = R.shape[0]
    S, Sp = _svec_maps(n)
    return S @ np.kron(R.T, R.T) @ Sp


@dataclass(frozen=True)
class Dims:
    """Canonical cone layout: free, nonnegative, SOC blocks, PSD blocks."""

    free: int = 0
    nonneg: int = 0
    soc: tuple[int, ...] = ()
    psd: tuple[int, ...] = ()

    @property
    def n_cone(self) -> int:
        return self.nonneg + sum(self.soc) + sum(svec_dim(n) for n in self.psd)

    @property
    def n(self) -> int:
        return self.free + self.n_cone

    @property
    def degree(self) -> int:
        return self.nonneg + len(self.soc) + sum(self.psd)

    def slices(self):
        """Yield (kind, size, slice) over the cone part (offset from 0)."""
        off = 0
        if self.nonneg:
            yield "nonneg", self.nonneg, slice(off, off + self.nonneg)
            off += self.nonneg
        for q in self.soc:
            yield "soc", q, slice(off, off + q)
            off += q
        for p in self.psd:
            d = svec_dim(p)
            yield "psd", p, slice(off, off + d)
            off += d


def identity(dims: Dims) -> np.ndarray:
    e = np.zeros(dims.n_cone)
    for kind, size, sl in dims.slices():
        if kind == "nonneg":
            e[sl] = 1.0
        elif kind == "soc":
            e[sl.start] = 1.0
        else:
            e[sl] = svec(np.eye(size))
    return e


def jordan(dims: Dims, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    for kind, size, sl in dims.slices():
        a, b = u[sl], v[sl]
        if kind == "nonneg":
            out[sl] = a * b
        elif kind == "soc":
            out[sl.start] = a @ b
            out[sl.start + 1:sl.stop] = a[0] * b[1:] + b[0] * a[1:]
        else:
            A, B = smat(a), smat(b)
            out[sl] = svec(0.5 * (A @ B + B @ A))
    return out


def jordan_solve(dims: Dims, lam: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Solve lam o x = v for x, with lam the (diagonal on PSD) scaled point."""
    out = np.empty_like(v)
    for kind, size, sl in dims.slices():
        l, b = lam[sl], v[sl]
        if kind == "nonneg":
            out[sl] = b / l
        elif kind == "soc":
            arw = l[0] * np.eye(size)
            arw[0, 1:] = l[1:]
            arw[1:, 0] = l[1:]
            out[sl] = np.linalg.solve(arw, b)
        else:
            d = np.diag(smat(l))
            out[sl] = svec(2.0 * smat(b) / (d[:, None] + d[None, :]))
    return out


def max_step(dims: Dims, lam: np.ndarray, d: np.ndarray) -> float:
    """Largest alpha with lam + alpha d in the cone (inf if unbounded)."""
    alpha = np.inf
    for kind, size, sl in dims.slices():
        l, v = lam[sl], d[sl]
        if kind == "nonneg":
            neg = v < 0
            if np.any(neg):
                alpha = min(alpha, np.min(-l[neg] / v[neg]))
        elif kind == "soc":
            alpha = min(alpha, _soc_step(l, v))
        else:
            ld = np.diag(smat(l))
            s = 1.0 / np.sqrt(ld)
            M = smat(v) * s[:, None] * s[None, :]
            emin = np.linalg.eigvalsh(M)[0]
            if emin < 0:
                alpha = min(alpha, -1.0 / emin)
    return alpha


def _soc_step(l: np.ndarray, v: np.ndarray) -> float:
    a = v[0] ** 2 - v[1:] @ v[1:]
    b = l[0] * v[0] - l[1:] @ v[1:]
    c = l[0] ** 2 - l[1:] @ l[1:]
    roots = []
    if abs(a) <= 1e-14 * max(1.0, abs(b), abs(c)):
        if b < 0:
            roots.append(-c / (2.0 * b))
    else:
        disc = b * b - a * c
        if disc >= 0:
            sq = np.sqrt(disc)
            # stable quadratic roots
            q = -(b + np.copysign(sq, b))
            if q != 0:
                roots.extend([q / a, c / q])
    pos = [r for r in roots if r > 0]
    alpha = min(pos) if pos else np.inf
    if v[0] < 0:
        alpha = min(alpha, -l[0] / v[0])
    return alpha


class NTScaling:
    """Nesterov-Todd scaling W of a primal/dual interior pair (x, z).

    Satisfies ``W z = W^{-T} x = lam``; on PSD blocks ``lam`` is diagonal.
    """

    def __init__(self, dims: Dims, x: np.ndarray, z: np.ndarray):
        self.dims = dims
        self.blocks = []
        lam = np.empty_like(x)
        for kind, size, sl in dims.slices():
            xs, zs = x[sl], z[sl]
            if kind == "nonneg":
                w = np.sqrt(xs / zs)
                self.blocks.append(("nonneg", sl, w))
                lam[sl] = np.sqrt(xs * zs)
            elif kind == "soc":
                J = -np.eye(size)
                J[0, 0] = 1.0
                xn = np.sqrt(xs @ J @ xs)
                zn = np.sqrt(zs @ J @ zs)
                xb, zb = xs / xn, zs / zn
                gamma = np.sqrt((1.0 + xb @ zb) / 2.0)
                wb = (xb + J @ zb) / (2.0 * gamma)
                beta = np.sqrt(xn / zn)
                hyp = np.eye(size)
                hyp[0, 0] = wb[0]
                hyp[0, 1:] = wb[1:]
                hyp[1:, 0] = wb[1:]
                hyp[1:, 1:] += np.outer(wb[1:], wb[1:]) / (1.0 + wb[0])
                Wm = beta * hyp
                hinv = hyp.copy()
                hinv[0, 1:] *= -1.0
                hinv[1:, 0] *= -1.0
                Winv = hinv / beta
                self.blocks.append(("soc", sl, (Wm, Winv)))
                lam[sl] = Wm @ zs
            else:
                X, Z = smat(xs), smat(zs)
                L1 = sla.cholesky(X, lower=True)
                L2 = sla.cholesky(Z, lower=True)
                U, sig, Vt = sla.svd(L2.T @ L1)
                R = L1 @ Vt.T / np.sqrt(sig)[None, :]
                Rinv = (np.sqrt(sig)[:, None] * Vt) @ sla.solve_triangular(
                    L1, np.eye(size), lower=True)
                self.blocks.append(("psd", sl, (R, Rinv)))
                lam[sl] = svec(np.diag(sig))
        self.lam = lam

    def apply(self, v: np.ndarray, how: str) -> np.ndarray:
        """how: 'W' (v -> W v), 'Wt' (W^T v), 'Winvt' (W^{-T} v)."""
        out = np.empty_like(v)
        for kind, sl, data in self.blocks:
            b = v[sl]
            if kind == "nonneg":
                out[sl] = b / data if how == "Winvt" else b * data
            elif kind == "soc":
                Wm, Winv = data
                out[sl] = (Winv @ b) if how == "Winvt" else (Wm @ b)
            else:
                R, Rinv = data
                B = smat(b)
                if how == "W":
                    out[sl] = svec(R.T @ B @ R)
                elif how == "Wt":
                    out[sl] = svec(R @ B @ R.T)
                else:
                    out[sl] = svec(Rinv @ B @ Rinv.T)
        return out

    def hessian_blocks(self):
        """Yield (slice, H) with H = W^T W restricted to each block; for the
        nonnegative block H is returned as its diagonal."""
        for kind, sl, data in self.blocks:
            if kind == "nonneg":
                yield kind, sl, data ** 2
            elif kind == "soc":
                Wm, _ = data
                yield kind, sl, Wm @ Wm
            else:
                R, _ = data
                G = R @ R.T
                yield kind, sl, congruence_matrix(G)
