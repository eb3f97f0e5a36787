"""Input models and input sequences I(1), I(2), ...

Random draws are addressed by (seed, logical index) rather than by call
order: row k of a model is the same no matter which engine asks for it or
when. Rows are generated in fixed-size blocks, block b seeded from
``SeedSequence([seed, b])``. Gaussian rows are ``mean + L @ z`` with L the
lower Cholesky factor of the covariance and z i.i.d. standard normals.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from ssiter.errors import BadCovariance, DimensionMismatch
from ssiter.linalg import as_vector

BLOCK = 1024
COV_TOL = 1e-10


def psd_cholesky(cov, tol: float = COV_TOL) -> np.ndarray:
    """Lower factor L with L @ L.T == cov for symmetric PSD ``cov``.

    Pivots within ``tol`` of zero are accepted (semi-definite); a pivot below
    -tol or an asymmetry above tol raises BadCovariance.
    """
    c = np.array(cov, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise BadCovariance(f"covariance must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise BadCovariance("covariance has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
    if np.max(np.abs(c - c.T), initial=0.0) > tol * scale:
        raise BadCovariance("covariance is not symmetric")
    n = c.shape[0]
    low = np.zeros_like(c)
    for j in range(n):
        piv = c[j, j] - low[j, :j] @ low[j, :j]
        if piv < -tol * scale:
            raise BadCovariance(f"covariance is not positive semidefinite (pivot {j} = {piv:.3g})")
        if piv <= tol * scale:
            # semidefinite direction: the remaining column must vanish too
            resid = c[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]
            if np.max(np.abs(resid), initial=0.0) > np.sqrt(tol) * scale:
                raise BadCovariance(f"covariance is not positive semidefinite (column {j})")
            continue
        low[j, j] = np.sqrt(piv)
        low[j + 1:, j] = (c[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


@dataclass(frozen=True)
class InputModel:
    """Constant, box-bounded (uniform per coordinate) or Gaussian inputs.

    Use the ``constant``/``box``/``gaussian`` constructors.
    """

    kind: str
    center: np.ndarray
    delta: float = 0.0
    cov: np.ndarray | None = None
    seed: int = 0
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def constant(cls, v, seed: int = 0) -> "InputModel":
        return cls(kind="constant", center=as_vector(v), seed=seed)

    @classmethod
    def box(cls, v, delta: float, seed: int = 0) -> "InputModel":
        if not delta >= 0:
            raise ValueError(f"delta must be >= 0, got {delta}")
        return cls(kind="box", center=as_vector(v), delta=float(delta), seed=seed)

    @classmethod
    def gaussian(cls, mean, cov, seed: int = 0) -> "InputModel":
        mean = as_vector(mean)
        cov = np.array(cov, dtype=np.float64)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatch(f"covariance shape {cov.shape} does not match mean length {mean.shape[0]}")
        return cls(kind="gaussian", center=mean, cov=cov, seed=seed, _chol=psd_cholesky(cov))

    @property
    def n(self) -> int:
        return self.center.shape[0]

    @property
    def has_diagonal_cov(self) -> bool:
        if self.kind != "gaussian":
            return True
        off = self.cov - np.diag(np.diag(self.cov))
        return not np.any(off)

    def _block(self, b: int) -> np.ndarray:
        return _model_block(self, b)

    def rows(self, start: int, stop: int) -> np.ndarray:
        """Rows for logical indices start..stop-1 (1-based, like rounds)."""
        if start < 1 or stop < start:
            raise ValueError(f"bad row range [{start}, {stop})")
        if self.kind == "constant":
            return np.tile(self.center, (stop - start, 1))
        out = np.empty((stop - start, self.n))
        k = start
        while k < stop:
            b, off = divmod(k - 1, BLOCK)
            take = min(BLOCK - off, stop - k)
            out[k - start:k - start + take] = self._block(b)[off:off + take]
            k += take
        return out

    def row(self, k: int) -> np.ndarray:
        return self.rows(k, k + 1)[0]


@lru_cache(maxsize=64)
def _cached_block(kind: str, seed: int, b: int, center: bytes, n: int, delta: float,
                  chol: bytes | None) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
    v = np.frombuffer(center, dtype=np.float64)
    if kind == "box":
        rows = v + rng.uniform(-delta, delta, size=(BLOCK, n))
    else:
        low = np.frombuffer(chol, dtype=np.float64).reshape(n, n)
        z = rng.standard_normal(size=(BLOCK, n))
        rows = v + z @ low.T
    rows.setflags(write=False)
    return rows


def _model_block(m: InputModel, b: int) -> np.ndarray:
    chol = m._chol.tobytes() if m._chol is not None else None
    return _cached_block(m.kind, int(m.seed), b, m.center.tobytes(), m.n, m.delta, chol)


@dataclass(frozen=True)
class InputSequence:
    """Finite input sequence; ``vectors[r-1]`` is I(r), ``deviations[r-1]`` is I(r) - v."""

    vectors: np.ndarray
    center: np.ndarray

    @property
    def deviations(self) -> np.ndarray:
        return self.vectors - self.center

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    def row(self, k: int) -> np.ndarray:
        if not 1 <= k <= len(self):
            raise IndexError(f"input row {k} outside sequence of length {len(self)}")
        return self.vectors[k - 1]

    def rows(self, start: int, stop: int) -> np.ndarray:
        if start < 1 or stop - 1 > len(self):
            raise IndexError(f"input rows [{start}, {stop}) outside sequence of length {len(self)}")
        return self.vectors[start - 1:stop - 1]

    def is_delta_bounded(self, delta: float) -> bool:
        if len(self) == 0:
            return True
        return bool(np.max(np.abs(self.deviations)) <= delta)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["round"] + [f"x{i}" for i in range(self.n)])
        wr.writerow(["center"] + [repr(float(x)) for x in self.center])
        for r, vec in enumerate(self.vectors, start=1):
            wr.writerow([r] + [repr(float(x)) for x in vec])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "InputSequence":
        rows = list(csv.reader(Path(path).read_text().splitlines()))
        center = np.array([float(x) for x in rows[1][1:]])
        vecs = np.array([[float(x) for x in r[1:]] for r in rows[2:]]).reshape(-1, center.shape[0])
        return cls(vectors=vecs, center=center)


def gen_sequence(model: InputModel, n: int, length: int) -> InputSequence:
    if length < 1:
        raise ValueError("sequence length must be >= 1")
    if model.n != n:
        raise DimensionMismatch(f"model has dimension {model.n}, asked for {n}")
    return InputSequence(vectors=model.rows(1, length + 1), center=model.center.copy())


def adversarial_box_sequence(v, delta: float, length: int, sign_pattern) -> InputSequence:
    """Every coordinate of every deviation sits on a face of the box: +-delta.

    ``sign_pattern`` broadcasts to (length, n); entries must be +1 or -1.
    """
    v = as_vector(v)
    if not delta >= 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    signs = np.broadcast_to(np.asarray(sign_pattern, dtype=np.float64), (length, v.shape[0]))
    if not np.all(np.abs(signs) == 1.0):
        raise ValueError("sign_pattern entries must be +1 or -1")
    return InputSequence(vectors=v + delta * signs, center=v.copy())
