"""Complex Hermitian matrices hosted in real symmetric PSD blocks.

A Hermitian ``W`` of order n is represented by the real symmetric matrix
``[[Re W, -Im W], [Im W, Re W]]`` of order 2n, which is PSD iff ``W`` is and
carries every eigenvalue of ``W`` twice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import LinExpr, Model, PsdVar


class NotHermitianError(ValueError):
    pass


def _check_hermitian(W: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    W = np.asarray(W, dtype=complex)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise NotHermitianError(f"expected a square matrix, got shape {W.shape}")
    scale = max(1.0, np.abs(W).max(initial=0.0))
    if np.abs(W - W.conj().T).max(initial=0.0) > tol * scale:
        raise NotHermitianError("matrix is not Hermitian")
    return W


def expand(W: np.ndarray) -> np.ndarray:
    """Real 2n x 2n embedding of a Hermitian matrix."""
    W = _check_hermitian(W)
    R, I = W.real, W.imag
    return np.block([[R, -I], [I, R]])


def collapse(X: np.ndarray) -> np.ndarray:
    """Hermitian matrix read back from a (structured) real embedding.

    Averages the redundant copies, so it is a left inverse of :func:`expand`
    and a projection for unstructured input.
    """
    n = X.shape[0] // 2
    A, B = X[:n, :n], X[n:, :n]
    C, D = X[n:, n:], X[:n, n:]
    re = 0.5 * (A + C)
    im = 0.5 * (B - D)
    W = re + 1j * im
    return 0.5 * (W + W.conj().T)


def max_eigpair(W: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenvalue of a Hermitian matrix and a unit eigenvector."""
    W = _check_hermitian(W)
    vals, vecs = np.linalg.eigh(0.5 * (W + W.conj().T))
    return float(vals[-1]), vecs[:, -1]


def rank_residual(W: np.ndarray) -> float:
    """Trace(W) - lambda_max(W); zero iff a PSD ``W`` has rank at most one."""
    W = _check_hermitian(W)
    return float(np.trace(W).real - max_eigpair(W)[0])


@dataclass(frozen=True)
class HermitianEmbedding:
    """A Hermitian variable W of order ``n`` living in a real PSD block."""

    n: int
    block: PsdVar

    @property
    def order(self) -> int:
        return 2 * self.n

    def re(self, k: int, m: int) -> LinExpr:
        return self.block.entry(k, m)

    def im(self, k: int, m: int) -> LinExpr:
        return self.block.entry(self.n + k, m)

    def trace(self) -> LinExpr:
        """Trace of W (half the trace of the real block)."""
        return sum((self.re(k, k) for k in range(self.n)), LinExpr())

    def quad(self, w: np.ndarray) -> LinExpr:
        """w^H W w for a fixed complex vector w."""
        v = np.concatenate([w.real, w.imag])
        return self.block.inner(np.outer(v, v))

    def value(self, X: np.ndarray) -> np.ndarray:
        return collapse(X)


def embed_hermitian(model: Model, n: int, name: str = "W") -> HermitianEmbedding:
    """Declare a Hermitian PSD variable of order ``n`` in ``model``.

    Adds the linear rows tying the real block to the embedding structure.
    """
    if n < 1:
        raise ValueError("order must be >= 1")
    X = model.psd(2 * n, name)
    for j in range(n):
        for i in range(j, n):
            model.add_eq(X.entry(i, j) - X.entry(n + i, n + j))
            # Im W lives in the lower-left block and must be antisymmetric
            model.add_eq(X.entry(n + i, j) + X.entry(n + j, i))
    return HermitianEmbedding(n, X)


def quadratic_epigraph(model: Model, coeffs, P: LinExpr, name: str = "epi") -> LinExpr:
    """Epigraph variable e with e >= c2 P^2 + c1 P + c0.

    Quadratic costs go through a rotated second-order cone
    2 * (e - c1 P - c0) * (1 / 2) >= (sqrt(c2) P)^2; linear costs return the
    affine expression itself.
    """
    c2, c1, c0 = (float(v) for v in coeffs)
    if c2 < 0:
        raise ValueError("quadratic cost coefficient must be nonnegative")
    P = LinExpr.lift(P)
    if c2 == 0.0:
        return P * c1 + c0
    e = model.free(1, name)[0]
    model.add_rotated_soc(e - P * c1 - c0, 0.5, [P * np.sqrt(c2)], name)
    return e
