"""Dense matrix helpers: norms, the Jacobi split and a pivoting solver.

Matrices and vectors are plain float64 numpy arrays. Sizes here are small
(a few hundred nodes at most), so everything is dense.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ssiter.errors import DimensionMismatch, ParseError, Singular, ZeroDiagonal

PIVOT_RTOL = 1e-12


def as_matrix(m) -> np.ndarray:
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def as_vector(x, n: int | None = None) -> np.ndarray:
    a = np.array(x, dtype=np.float64).reshape(-1)
    if n is not None and a.shape[0] != n:
        raise DimensionMismatch(f"expected vector of length {n}, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("vector has non-finite entries")
    return a


def inf_norm_vec(x) -> float:
    """max_i |x_i|; 0.0 for the empty vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(x)))


def inf_norm_mat(m) -> float:
    """Induced infinity norm, i.e. the largest absolute row sum."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(m), axis=1)))


@dataclass(frozen=True)
class JacobiSplit:
    """A = diag(W)^-1 and B = I - diag(W)^-1 W, so that u = A v + B u."""

    a: np.ndarray
    b: np.ndarray
    norm_a: float
    norm_b: float

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def diag_a(self) -> np.ndarray:
        return np.diag(self.a).copy()


def _reciprocal_diagonal(w: np.ndarray) -> np.ndarray:
    d = np.diag(w)
    zero = np.flatnonzero(d == 0.0)
    if zero.size:
        raise ZeroDiagonal(int(zero[0]))
    return 1.0 / d


def jacobi_split(w) -> JacobiSplit:
    w = as_matrix(w)
    inv_d = _reciprocal_diagonal(w)
    a = np.diag(inv_d)
    # -w_ij / w_ii off the diagonal; node-local weights use the same expression
    b = -(w / np.diag(w)[:, None])
    np.fill_diagonal(b, 0.0)
    for arr in (a, b):
        arr.setflags(write=False)
    return JacobiSplit(a=a, b=b, norm_a=inf_norm_mat(a), norm_b=inf_norm_mat(b))


def is_diag_dominant(w) -> bool:
    w = np.asarray(w, dtype=np.float64)
    d = np.abs(np.diag(w))
    off = np.sum(np.abs(w), axis=1) - d
    return bool(np.all(d > off))


def is_normalized_diag_dominant(w) -> bool:
    """Strict row dominance plus |w_ii| >= 1 on every row."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        return False
    return is_diag_dominant(w) and bool(np.all(np.abs(np.diag(w)) >= 1.0))


@dataclass(frozen=True)
class LUFactors:
    lu: np.ndarray
    perm: np.ndarray


def lu_factor(w) -> LUFactors:
    """Gaussian elimination with partial (row) pivoting.

    Raises Singular when the best available pivot in a column falls below
    PIVOT_RTOL * ||w||_inf.
    """
    lu = as_matrix(w).copy()
    n = lu.shape[0]
    perm = np.arange(n)
    tol = PIVOT_RTOL * inf_norm_mat(lu)
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[p, k]) < tol or lu[p, k] == 0.0:
            raise Singular(f"matrix is singular to working precision (column {k})")
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        if k + 1 < n:
            lu[k + 1:, k] /= lu[k, k]
            lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return LUFactors(lu=lu, perm=perm)


def lu_solve(f: LUFactors, rhs) -> np.ndarray:
    lu = f.lu
    n = lu.shape[0]
    y = np.array(rhs, dtype=np.float64)[f.perm]
    for i in range(1, n):
        y[i] -= lu[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        y[i] = (y[i] - lu[i, i + 1:] @ y[i + 1:]) / lu[i, i]
    return y


def solve_exact(w, v) -> np.ndarray:
    """Solve W u = v. Used as the reference fixed point u for all error traces."""
    w = as_matrix(w)
    v = as_vector(v, w.shape[0])
    return lu_solve(lu_factor(w), v)


def mat_inverse(w) -> np.ndarray:
    w = as_matrix(w)
    return lu_solve(lu_factor(w), np.eye(w.shape[0]))


def read_matrix(path) -> np.ndarray:
    """Parse the matrix text format: a line with n, then n rows of n numbers.

    Blank lines are skipped; errors carry the 1-based line number.
    """
    lines = Path(path).read_text().splitlines()
    rows: list[tuple[int, str]] = [(i + 1, s) for i, s in enumerate(lines) if s.strip()]
    if not rows:
        raise ParseError("empty matrix file", 1)
    lineno, head = rows[0]
    try:
        n = int(head.split()[0])
        if len(head.split()) != 1:
            raise ValueError
    except ValueError:
        raise ParseError(f"expected a single integer dimension, got {head.strip()!r}", lineno) from None
    if n < 1:
        raise ParseError(f"dimension must be positive, got {n}", lineno)
    body = rows[1:]
    if len(body) != n:
        raise DimensionMismatch(f"header says n={n} but found {len(body)} matrix rows")
    m = np.empty((n, n))
    for r, (lineno, text) in enumerate(body):
        parts = text.split()
        if len(parts) != n:
            raise DimensionMismatch(f"row {r} has {len(parts)} entries, expected {n} (line {lineno})")
        try:
            m[r] = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"non-numeric entry in {text.strip()!r}", lineno) from None
    if not np.all(np.isfinite(m)):
        raise ParseError("matrix has non-finite entries")
    return m


def format_matrix(m) -> str:
    m = as_matrix(m)
    out = [str(m.shape[0])]
    out.extend(" ".join(repr(float(x)) for x in row) for row in m)
    return "\n".join(out) + "\n"


def write_matrix(path, m) -> None:
    Path(path).write_text(format_matrix(m))
