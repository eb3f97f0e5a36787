"""Error traces, convergence envelopes and output-distribution laws.

Notation follows the node update O(r+1) = A I(r+1) + B O(r) with the
Jacobi split of W, the fixed point u = W^-1 v, and the error c(t) = O(r+t) - u.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from ssiter.errors import NotContractive, TooFewSamples
from ssiter.inputs import psd_cholesky
from ssiter.linalg import (JacobiSplit, as_matrix, as_vector, inf_norm_vec, mat_inverse,
                           solve_exact)
from ssiter.sync_engine import RunTrace
from ssiter.topology import WeightedGraph

FP_SLACK = 1e-9


@dataclass(frozen=True)
class BoundParams:
    c1: float
    c2: float
    z: float
    delta: float
    variant: str

    def envelope(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.delta * self.c1 + self.c2 ** t * self.z


def _check_contractive(split: JacobiSplit) -> None:
    if not split.norm_b < 1.0:
        raise NotContractive(split.norm_b)


def bound_params(split: JacobiSplit, delta: float, z: float, variant: str = "sync") -> BoundParams:
    """Constants of the two box-bound theorems.

    sync:  c1 = ||A|| / (1 - ||B||)
    async: c1 = 1 / (1 - ||B||)
    c2 = ||B|| in both cases.
    """
    _check_contractive(split)
    if variant == "sync":
        c1 = split.norm_a / (1.0 - split.norm_b)
    elif variant == "async":
        c1 = 1.0 / (1.0 - split.norm_b)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return BoundParams(c1=c1, c2=split.norm_b, z=float(z), delta=float(delta), variant=variant)


def sync_envelope(split: JacobiSplit, delta: float, z: float, horizon: int) -> np.ndarray:
    """eps(t) = delta * c1 + c2**t * z for t = 0..horizon."""
    return bound_params(split, delta, z, "sync").envelope(np.arange(horizon + 1))


def async_envelope(split: JacobiSplit, delta: float, z: float, rounds: int) -> np.ndarray:
    """Same shape as the sync envelope, t counting asynchronous rounds."""
    return bound_params(split, delta, z, "async").envelope(np.arange(rounds + 1))


@dataclass(frozen=True)
class ErrorTrace:
    errors: np.ndarray
    norms: np.ndarray

    def __len__(self) -> int:
        return self.norms.shape[0]


def error_trace(trace, u) -> ErrorTrace:
    """c(t) = O(t) - u for every recorded configuration, with sup-norms.

    ``trace`` is a RunTrace or an array of output rows.
    """
    outs = trace.outputs if isinstance(trace, RunTrace) else np.asarray(trace, dtype=np.float64)
    u = as_vector(u, outs.shape[1])
    errs = outs - u
    return ErrorTrace(errors=errs, norms=np.max(np.abs(errs), axis=1))


def closed_form_error(split: JacobiSplit, deviations, c0, dt: int) -> np.ndarray:
    """sum_{j<dt} B^j A D(dt-j) + B^dt c(0), summed term by term.

    ``deviations[m]`` is D(m+1), the deviation consumed in round m+1.
    """
    dev = np.asarray(deviations, dtype=np.float64)
    if dev.shape[0] < dt:
        raise ValueError(f"need {dt} deviations, got {dev.shape[0]}")
    a, b = split.a, split.b
    acc = np.zeros(split.n)
    power = np.eye(split.n)
    for j in range(dt):
        acc += power @ (a @ dev[dt - 1 - j])
        power = b @ power
    return acc + power @ as_vector(c0, split.n)


def matrix_powers(b: np.ndarray, count: int) -> np.ndarray:
    """Stack of B^0 .. B^count by repeated multiplication."""
    n = b.shape[0]
    out = np.empty((count + 1, n, n))
    out[0] = np.eye(n)
    for j in range(count):
        out[j + 1] = b @ out[j]
    return out


def closed_form_errors(split: JacobiSplit, deviations, c0) -> np.ndarray:
    """closed_form_error for every dt = 0..len(deviations) at once.

    Row dt of the result equals ``closed_form_error(split, deviations, c0, dt)``
    up to summation order. Cost is O(T^2 n^2) in matrix products.
    """
    dev = np.asarray(deviations, dtype=np.float64)
    T = dev.shape[0]
    c0 = as_vector(c0, split.n)
    powers = matrix_powers(np.asarray(split.b), T)
    x = np.asarray(split.a) @ dev.T
    out = np.zeros((T + 1, split.n))
    for j in range(T):
        # term B^j A D(m+1) lands in c(j + m + 1)
        out[j + 1:] += (powers[j] @ x[:, :T - j]).T
    out += powers @ c0
    return out


@dataclass(frozen=True)
class DistributionSpec:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {mean.shape[0]}")
        psd_cholesky(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    def correlation(self) -> np.ndarray:
        sd = np.sqrt(np.diag(self.cov))
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = self.cov / np.outer(sd, sd)
        return np.where(np.outer(sd, sd) > 0, corr, 0.0)


def _symmetrize(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c + c.T)


def theoretical_output_distribution(g, inp: DistributionSpec) -> DistributionSpec:
    """N(u, W^-1 S W^-T): the law of W^-1 I for a single input draw I ~ N(v, S).

    This is the law of the fixed point reached when one noisy input is held
    constant. With fresh i.i.d. inputs every round the long-run marginal of
    the outputs is :func:`stationary_output_distribution` instead.
    """
    w = g.w if isinstance(g, WeightedGraph) else as_matrix(g)
    winv = mat_inverse(w)
    mean = solve_exact(w, inp.mean)
    return DistributionSpec(mean, _symmetrize(winv @ inp.cov @ winv.T))


def stationary_output_distribution(split: JacobiSplit, inp: DistributionSpec) -> DistributionSpec:
    """Long-run marginal of O(k) under i.i.d. N(v, S) inputs each round.

    The covariance P solves P = B P B^T + A S A^T (sum of B^j A S A^T B^jT).
    """
    _check_contractive(split)
    a, b = np.asarray(split.a), np.asarray(split.b)
    mean = np.linalg.solve(np.eye(split.n) - b, a @ inp.mean)
    p = solve_discrete_lyapunov(b, a @ inp.cov @ a.T)
    return DistributionSpec(mean, _symmetrize(p))


def per_round_distribution(split: JacobiSplit, v, sigma_v, prev_out) -> DistributionSpec:
    """Law of O(k+1) given O(k): N(A v + B O(k), A S A^T)."""
    a, b = np.asarray(split.a), np.asarray(split.b)
    v = as_vector(v, split.n)
    prev = as_vector(prev_out, split.n)
    s = np.asarray(sigma_v, dtype=np.float64)
    return DistributionSpec(a @ v + b @ prev, _symmetrize(a @ s @ a.T))


def default_burn_in(norm_b: float, eps: float = 1e-6) -> int:
    """Rounds until ||B||^k drops below eps."""
    if norm_b <= 0.0:
        return 1
    if norm_b >= 1.0:
        raise NotContractive(norm_b)
    return max(1, math.ceil(math.log(eps) / math.log(norm_b)))


def estimate_output_distribution(trace, burn_in: int, thin: int = 1) -> DistributionSpec:
    """Sample mean and unbiased sample covariance of the outputs after burn-in.

    ``trace`` is a RunTrace (rounds 1..T are used; round 0 is the initial
    configuration) or a plain (samples, n) array. Keeps every ``thin``-th
    sample after the first ``burn_in``.
    """
    if isinstance(trace, RunTrace):
        samples = trace.outputs[1:]
    else:
        samples = np.asarray(trace, dtype=np.float64)
    kept = samples[burn_in::thin]
    if kept.shape[0] < 2:
        raise TooFewSamples(f"{kept.shape[0]} samples left after burn-in {burn_in} (thin {thin})")
    mean = kept.mean(axis=0)
    cov = np.atleast_2d(np.cov(kept, rowvar=False, ddof=1))
    return DistributionSpec(mean, _symmetrize(cov))


def relative_frobenius(estimate, reference) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    diff = np.asarray(estimate, dtype=np.float64) - reference
    denom = np.linalg.norm(reference)
    if denom == 0.0:
        return float(np.linalg.norm(diff))
    return float(np.linalg.norm(diff) / denom)


@dataclass(frozen=True)
class BoundReport:
    observed: np.ndarray
    envelope: np.ndarray
    tolerance: float
    threshold: float | None = None

    @property
    def slack(self) -> np.ndarray:
        return self.envelope - self.observed

    @property
    def violated(self) -> np.ndarray:
        return self.observed > self.envelope + self.tolerance

    @property
    def violations(self) -> int:
        return int(np.sum(self.violated))

    @property
    def ok(self) -> bool:
        return self.violations == 0

    @property
    def max_violation(self) -> float:
        """Largest observed - envelope (negative when every round has slack)."""
        if self.observed.size == 0:
            return float("-inf")
        return float(np.max(self.observed - self.envelope))

    @property
    def first_below_threshold(self) -> int | None:
        if self.threshold is None:
            return None
        hits = np.flatnonzero(self.envelope < self.threshold)
        return int(hits[0]) if hits.size else None

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "observed", "envelope", "slack", "violated"])
        for t, (o, e) in enumerate(zip(self.observed, self.envelope)):
            wr.writerow([t, repr(float(o)), repr(float(e)), repr(float(e - o)), int(o > e + self.tolerance)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary(self) -> str:
        first = self.first_below_threshold
        parts = [f"rounds={self.observed.shape[0]}", f"violations={self.violations}",
                 f"max_violation={self.max_violation:.6g}"]
        if self.threshold is not None:
            parts.append(f"first_below_{self.threshold:g}={first}")
        return " ".join(parts)


def check_bound(errors, envelope, z: float = 0.0, threshold: float | None = None) -> BoundReport:
    """Compare observed sup-norm errors with an envelope, round by round.

    A round is a violation when observed > envelope + 1e-9 * max(1, z).
    """
    obs = errors.norms if isinstance(errors, ErrorTrace) else np.asarray(errors, dtype=np.float64)
    env = np.asarray(envelope, dtype=np.float64)
    if obs.shape != env.shape:
        raise ValueError(f"error trace has {obs.shape[0]} rounds, envelope has {env.shape[0]}")
    return BoundReport(observed=obs, envelope=env, tolerance=FP_SLACK * max(1.0, float(z)),
                       threshold=threshold)


def sup_error(x, u) -> float:
    return inf_norm_vec(np.asarray(x) - np.asarray(u))
