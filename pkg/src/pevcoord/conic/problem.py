"""Cone-program container and a small affine modeling layer.

A :class:`ConicProblem` is ``minimize c'x + offset  s.t.  A x = b`` where ``x``
is a concatenation of typed blocks (free, nonnegative, second-order cone,
PSD in svec storage).  :class:`Model` builds such problems from affine
expressions so the problem builders never touch raw indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .cones import smat, svec_dim, svec_entry

BLOCK_KINDS = ("free", "nonneg", "soc", "psd")


@dataclass(frozen=True)
class Block:
    kind: str
    size: int
    name: str = ""

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.kind == "psd" and self.size < 1:
            raise ValueError("PSD block order must be >= 1")
        if self.kind == "soc" and self.size < 2:
            raise ValueError("SOC block dimension must be >= 2")
        if self.size < 1:
            raise ValueError("block size must be >= 1")

    @property
    def length(self) -> int:
        return svec_dim(self.size) if self.kind == "psd" else self.size


@dataclass
class ConicProblem:
    blocks: list[Block]
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.A = sp.csr_matrix(self.A, dtype=float)
        n = sum(blk.length for blk in self.blocks)
        if self.c.shape != (n,):
            raise ValueError(f"objective has length {self.c.shape}, expected {n}")
        if self.A.shape != (self.b.shape[0], n):
            raise ValueError(
                f"equality map has shape {self.A.shape}, expected ({self.b.shape[0]}, {n})")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def offsets(self) -> list[int]:
        out, off = [], 0
        for blk in self.blocks:
            out.append(off)
            off += blk.length
        return out

    def block_slice(self, i: int) -> slice:
        off = self.offsets()[i]
        return slice(off, off + self.blocks[i].length)

    def dump(self) -> str:
        """Deterministic text form: one block or constraint per line."""
        lines = [f"blocks {len(self.blocks)} rows {self.A.shape[0]} offset {self.offset!r}"]
        for i, blk in enumerate(self.blocks):
            lines.append(f"block {i} {blk.kind} {blk.size} {blk.name}".rstrip())
        nz = np.flatnonzero(self.c)
        lines.append("min " + " ".join(f"{self.c[j]!r}*x{j}" for j in nz))
        A = self.A.tocsr()
        A.sort_indices()
        for r in range(A.shape[0]):
            lo, hi = A.indptr[r], A.indptr[r + 1]
            terms = " ".join(f"{v!r}*x{j}" for j, v in zip(A.indices[lo:hi], A.data[lo:hi]))
            lines.append(f"eq {r}: {terms} = {self.b[r]!r}")
        return "\n".join(lines) + "\n"


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITERS = "max_iters"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class Tolerances:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iters: int = 200


@dataclass
class ConicSolution:
    status: Status
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    objective: float
    dual_objective: float
    duality_gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    blocks: list[Block] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def value(self, ref) -> np.ndarray:
        """Primal values of a :class:`Var`, :class:`PsdVar` (as a matrix),
        or :class:`LinExpr`."""
        if isinstance(ref, PsdVar):
            return smat(self.x[ref.index])
        if isinstance(ref, LinExpr):
            return ref.evaluate(self.x)
        return self.x[ref.index]


class LinExpr:
    """Affine expression sum_j coef_j x_j + const over model variables."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict | None = None, const: float = 0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def lift(v) -> "LinExpr":
        if isinstance(v, LinExpr):
            return v
        return LinExpr(const=float(v))

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def __add__(self, other):
        o = LinExpr.lift(other)
        out = self.copy()
        for j, v in o.terms.items():
            out.terms[j] = out.terms.get(j, 0.0) + v
        out.const += o.const
        return out

    __radd__ = __add__

    def __neg__(self):
        return LinExpr({j: -v for j, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-LinExpr.lift(other))

    def __rsub__(self, other):
        return LinExpr.lift(other) + (-self)

    def __mul__(self, k):
        k = float(k)
        return LinExpr({j: k * v for j, v in self.terms.items()}, k * self.const)

    __rmul__ = __mul__

    def __truediv__(self, k):
        return self * (1.0 / float(k))

    def evaluate(self, x: np.ndarray) -> float:
        return self.const + sum(v * x[j] for j, v in self.terms.items())

    def __repr__(self):
        return f"LinExpr({self.terms}, {self.const})"


def lsum(items: Iterable) -> LinExpr:
    out = LinExpr()
    for it in items:
        out = out + it
    return out


@dataclass(frozen=True)
class Var:
    """A block of scalar variables."""

    index: np.ndarray

    def __len__(self):
        return len(self.index)

    def __getitem__(self, k) -> LinExpr:
        return LinExpr({int(self.index[k]): 1.0})


@dataclass(frozen=True)
class PsdVar:
    """A symmetric PSD matrix variable of order ``order`` (svec storage)."""

    index: np.ndarray
    order: int

    def entry(self, i: int, j: int) -> LinExpr:
        pos, f = svec_entry(self.order, i, j)
        return LinExpr({int(self.index[pos]): f})

    def trace(self) -> LinExpr:
        return lsum(self.entry(i, i) for i in range(self.order))

    def inner(self, C: np.ndarray) -> LinExpr:
        """Trace inner product <C, X> for symmetric C."""
        C = 0.5 * (C + C.T)
        out = LinExpr()
        for j in range(self.order):
            for i in range(j, self.order):
                k = C[i, j] if i == j else 2.0 * C[i, j]
                if k != 0.0:
                    out = out + self.entry(i, j) * k
        return out


class Model:
    """Incremental builder for :class:`ConicProblem`."""

    def __init__(self):
        self.blocks: list[Block] = []
        self._n = 0
        self._rows: list[LinExpr] = []
        self._rhs: list[float] = []
        self._objective = LinExpr()

    def _alloc(self, kind: str, size: int, name: str) -> np.ndarray:
        blk = Block(kind, size, name)
        idx = np.arange(self._n, self._n + blk.length)
        self.blocks.append(blk)
        self._n += blk.length
        return idx

    def free(self, size: int = 1, name: str = "") -> Var:
        return Var(self._alloc("free", size, name))

    def nonneg(self, size: int = 1, name: str = "") -> Var:
        return Var(self._alloc("nonneg", size, name))

    def soc(self, size: int, name: str = "") -> Var:
        return Var(self._alloc("soc", size, name))

    def psd(self, order: int, name: str = "") -> PsdVar:
        return PsdVar(self._alloc("psd", order, name), order)

    def add_eq(self, expr, rhs=0.0) -> int:
        e = LinExpr.lift(expr) - rhs
        self._rows.append(LinExpr(e.terms))
        self._rhs.append(-e.const)
        return len(self._rows) - 1

    def add_ge(self, expr, rhs=0.0, name: str = "") -> Var:
        """expr >= rhs, through a nonnegative slack."""
        s = self.nonneg(1, name)
        self.add_eq(LinExpr.lift(expr) - s[0], rhs)
        return s

    def add_le(self, expr, rhs=0.0, name: str = "") -> Var:
        return self.add_ge(-LinExpr.lift(expr), -rhs, name)

    def add_soc(self, exprs: list, name: str = "") -> Var:
        """||exprs[1:]|| <= exprs[0]."""
        q = self.soc(len(exprs), name)
        for k, e in enumerate(exprs):
            self.add_eq(q[k] - e, 0.0)
        return q

    def add_rotated_soc(self, u, v, w: list, name: str = "") -> Var:
        """2 u v >= ||w||^2 with u, v >= 0."""
        u, v = LinExpr.lift(u), LinExpr.lift(v)
        r2 = 1.0 / np.sqrt(2.0)
        return self.add_soc([(u + v) * r2, (u - v) * r2] + list(w), name)

    def minimize(self, expr) -> None:
        self._objective = LinExpr.lift(expr)

    @property
    def objective(self) -> LinExpr:
        return self._objective

    def build(self) -> ConicProblem:
        rows, cols, vals = [], [], []
        for r, e in enumerate(self._rows):
            for j, v in e.terms.items():
                if v != 0.0:
                    rows.append(r)
                    cols.append(j)
                    vals.append(v)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(self._rows), self._n))
        c = np.zeros(self._n)
        for j, v in self._objective.terms.items():
            c[j] += v
        return ConicProblem(list(self.blocks), c, A, np.array(self._rhs, dtype=float),
                            offset=self._objective.const)
