"""Drivers behind the CLI: single bound-checked runs, heatmap grids and
output-distribution experiments.

Every random quantity is drawn from ``SeedSequence([seed, tag, ...])`` so a
run is fully determined by its config, independent of worker count.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ssiter.analysis import (BoundReport, DistributionSpec, async_envelope, check_bound, default_burn_in,
                             error_trace, estimate_output_distribution, relative_frobenius,
                             stationary_output_distribution, sync_envelope,
                             theoretical_output_distribution)
from ssiter.async_engine import (AsyncLayout, Schedule, initial_errors, initial_state,
                                 run_async_rounds)
from ssiter.config import ExperimentConfig
from ssiter.errors import ConfigError, NotContractive
from ssiter.inputs import InputModel, adversarial_box_sequence, gen_sequence
from ssiter.linalg import JacobiSplit, as_vector, jacobi_split, solve_exact
from ssiter.sync_engine import run_sync
from ssiter.topology import (WeightedGraph, build_circle, build_unit_disc, graph_from_matrix,
                             load_graph, node_weights)

TAG_CENTER = 1
TAG_INITIAL = 2
TAG_INPUTS = 3
TAG_SCHEDULE = 4
TAG_REGISTERS = 5
TAG_SIGNS = 6
TAG_HEATMAP = 7


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _subseed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1, dtype=np.uint64)[0] >> 1)


def build_topology(cfg: ExperimentConfig) -> WeightedGraph:
    if cfg.topology == "circle":
        return build_circle(cfg.n, cfg.diag, cfg.off)
    if cfg.topology == "unit-disc":
        return build_unit_disc(cfg.n, cfg.side, cfg.radius, cfg.ratio, cfg.topology_seed)
    return load_graph(cfg.matrix)


def require_dominant(g: WeightedGraph) -> JacobiSplit:
    """Jacobi split of a graph the bound theorems apply to, or NotContractive."""
    split = jacobi_split(g.w)
    if split.norm_b >= 1.0:
        raise NotContractive(split.norm_b)
    if not g.dominant:
        raise NotContractive(split.norm_b, "W is not normalized diagonally dominant "
                                           f"(||A||_inf = {split.norm_a!r}, ||B||_inf = {split.norm_b!r})")
    return split


def _center(cfg: ExperimentConfig, n: int) -> np.ndarray:
    if cfg.center:
        return np.broadcast_to(as_vector(cfg.center), (n,)).copy()
    return _rng(cfg.seed, TAG_CENTER).uniform(-1.0, 1.0, n)


def _uniform(rng: np.random.Generator, scale: float, size) -> np.ndarray:
    return rng.uniform(-scale, scale, size) if scale > 0 else np.zeros(size)


def _input_model(cfg: ExperimentConfig, v: np.ndarray) -> InputModel:
    seed = _subseed(cfg.seed, TAG_INPUTS)
    if cfg.input == "constant":
        return InputModel.constant(v, seed)
    if cfg.input == "gaussian":
        return InputModel.gaussian(v, _diag_cov(cfg, v.shape[0]), seed)
    return InputModel.box(v, cfg.delta, seed)


def _diag_cov(cfg: ExperimentConfig, n: int) -> np.ndarray:
    return np.diag(np.broadcast_to(np.asarray(cfg.sigma, dtype=np.float64), (n,)))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


@dataclass(eq=False)
class RunResult:
    graph: WeightedGraph
    split: JacobiSplit
    u: np.ndarray
    z: float
    report: BoundReport
    trace_csv: str
    step_log_csv: str | None = None
    stale_reads: int = 0

    @property
    def ok(self) -> bool:
        return self.report.ok and self.stale_reads == 0

    def summary(self) -> str:
        return (f"norm_a={self.split.norm_a!r} norm_b={self.split.norm_b!r} z={self.z!r} "
                f"{self.report.summary()} stale_reads={self.stale_reads}")


def run_experiment(cfg: ExperimentConfig, g: WeightedGraph | None = None) -> RunResult:
    """One run plus its envelope check (sync or async per ``cfg.engine``)."""
    g = g if g is not None else build_topology(cfg)
    split = require_dominant(g)
    n = g.n
    v = _center(cfg, n)
    u = solve_exact(g.w, v)
    x0 = _uniform(_rng(cfg.seed, TAG_INITIAL), cfg.init_scale, n)
    delta = 0.0 if cfg.input == "constant" else cfg.delta
    if cfg.input == "gaussian":
        raise ConfigError("run needs bounded inputs (box, adversarial or constant); use dist for gaussian")

    if cfg.engine == "sync":
        if cfg.input == "adversarial":
            signs = _rng(cfg.seed, TAG_SIGNS).choice([-1.0, 1.0], size=(cfg.rounds, n))
            seq = adversarial_box_sequence(v, delta, cfg.rounds, signs)
        else:
            seq = gen_sequence(_input_model(cfg, v), n, cfg.rounds)
        trace = run_sync(g, seq, x0)
        errs = error_trace(trace, u)
        z = float(errs.norms[0])
        report = check_bound(errs, sync_envelope(split, delta, z, cfg.rounds), z)
        return RunResult(g, split, u, z, report, trace.to_csv())

    if cfg.input == "adversarial":
        raise ConfigError("adversarial sequences are sync-only; use input = box")
    layout = AsyncLayout.from_graph(g)
    regs = _uniform(_rng(cfg.seed, TAG_REGISTERS), cfg.registers_scale, layout.num_registers)
    state = initial_state(layout, x0, registers=regs)
    z = initial_errors(layout, state, u)
    sched = Schedule(n, cfg.policy, cfg.fair_window, _subseed(cfg.seed, TAG_SCHEDULE))
    tr = run_async_rounds(g, _input_model(cfg, v), state, sched, cfg.rounds, record_log=cfg.step_log)
    outs = tr.outputs_at_rounds()[:cfg.rounds + 1]
    errs = error_trace(outs, u)
    report = check_bound(errs, async_envelope(split, delta, z, cfg.rounds), z)
    steps = np.concatenate([[-1], tr.boundary_steps[:cfg.rounds]])
    rows = [(k, int(steps[k]), i, repr(float(outs[k, i]))) for k in range(outs.shape[0]) for i in range(n)]
    trace_csv = _csv_text(["round", "step", "node", "output"], rows)
    return RunResult(g, split, u, z, report, trace_csv,
                     step_log_csv=tr.step_log_csv() if cfg.step_log else None,
                     stale_reads=tr.final.stale_reads)


@dataclass(frozen=True, eq=False)
class HeatmapGrid:
    """Rows are deltas, columns iteration counts; cells are mean final errors."""

    deltas: np.ndarray
    iterations: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    trials: int

    def to_csv(self) -> str:
        rows = []
        for r, d in enumerate(self.deltas):
            for c, k in enumerate(self.iterations):
                rows.append((repr(float(d)), repr(math.log10(d)) if d > 0 else "",
                             int(k), repr(math.log10(k)) if k > 0 else "",
                             repr(float(self.mean[r, c])), repr(float(self.stderr[r, c])), self.trials))
        return _csv_text(["delta", "log10_delta", "iterations", "log10_iterations",
                          "mean_error", "std_error", "trials"], rows)

    def monotonicity_violations(self) -> list[tuple[int, int]]:
        """(row, col) where cell col+1 exceeds cell col by more than one standard error."""
        bad = []
        for r in range(self.mean.shape[0]):
            for c in range(self.mean.shape[1] - 1):
                slack = max(self.stderr[r, c], self.stderr[r, c + 1])
                if self.mean[r, c + 1] > self.mean[r, c] + slack:
                    bad.append((r, c))
        return bad

    def flatten_columns(self, rel: float = 0.1) -> np.ndarray:
        """Per row, the first column within ``rel`` of that row's last cell."""
        final = self.mean[:, -1:]
        close = self.mean <= (1.0 + rel) * final + 1e-12
        return np.argmax(close, axis=1)


def _heatmap_row(args) -> np.ndarray:
    w, engine, policy, fair_window, init_scale, reg_scale, seed, delta, iterations, trials = args
    g = graph_from_matrix(w)
    weights = node_weights(g)
    n = g.n
    iterations = np.asarray(iterations, dtype=np.int64)
    longest = int(iterations.max())
    out = np.empty((trials, iterations.shape[0]))
    layout = AsyncLayout.from_graph(g, weights) if engine == "async" else None
    for t in range(trials):
        # draws depend on the trial only, so rows differ by the noise scale alone
        rng = _rng(seed, TAG_HEATMAP, t)
        v = rng.uniform(-1.0, 1.0, n)
        x0 = _uniform(rng, init_scale, n)
        u = solve_exact(g.w, v)
        if engine == "sync":
            dev = delta * rng.uniform(-1.0, 1.0, (longest, n))
            for c, k in enumerate(iterations):
                if k == 0:
                    out[t, c] = np.max(np.abs(x0 - u))
                    continue
                # deviations indexed back from the last round, shared by every column
                trace = run_sync(g, v + dev[:k][::-1], x0, weights)
                out[t, c] = np.max(np.abs(trace.outputs[-1] - u))
        else:
            regs = _uniform(rng, reg_scale, layout.num_registers)
            state = initial_state(layout, x0, registers=regs)
            model = InputModel.box(v, delta, _subseed(seed, TAG_HEATMAP, t, TAG_INPUTS))
            sched = Schedule(n, policy, fair_window, _subseed(seed, TAG_HEATMAP, t, TAG_SCHEDULE))
            outs = state.out[None, :]
            if longest > 0:
                tr = run_async_rounds(g, model, state, sched, longest, weights)
                outs = tr.outputs_at_rounds()
            out[t] = np.max(np.abs(outs[iterations] - u), axis=1)
    return out


def run_heatmap(cfg: ExperimentConfig, g: WeightedGraph | None = None) -> HeatmapGrid:
    """Mean final error over trials for every (delta, iterations) cell.

    Each trial draws v, an initial configuration and a deviation sequence
    scaled by delta. Trial t uses the same draws in every cell (common random
    numbers), so cells differ only through delta and the iteration count.
    """
    g = g if g is not None else build_topology(cfg)
    require_dominant(g)
    deltas = np.asarray(cfg.deltas, dtype=np.float64)
    iterations = np.asarray(cfg.iterations, dtype=np.int64)
    jobs = [(np.array(g.w), cfg.engine, cfg.policy, cfg.fair_window, cfg.init_scale, cfg.registers_scale,
             cfg.seed, float(d), tuple(int(k) for k in iterations), cfg.trials)
            for d in deltas]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_heatmap_row, jobs))
    else:
        results = [_heatmap_row(j) for j in jobs]
    errs = np.stack(results)
    mean = errs.mean(axis=1)
    stderr = errs.std(axis=1, ddof=1) / math.sqrt(cfg.trials) if cfg.trials > 1 else np.zeros_like(mean)
    return HeatmapGrid(deltas=deltas, iterations=iterations, mean=mean, stderr=stderr, trials=cfg.trials)


@dataclass(eq=False)
class DistResult:
    estimate: DistributionSpec
    theory: DistributionSpec
    stationary: DistributionSpec | None
    samples: np.ndarray
    burn_in: int
    thin: int

    @property
    def used_samples(self) -> int:
        return self.samples[self.burn_in::self.thin].shape[0]

    @property
    def mean_errors(self) -> np.ndarray:
        return np.abs(self.estimate.mean - self.theory.mean)

    @property
    def cov_error(self) -> float:
        return relative_frobenius(self.estimate.cov, self.theory.cov)

    @property
    def stationary_cov_error(self) -> float | None:
        if self.stationary is None:
            return None
        return relative_frobenius(self.estimate.cov, self.stationary.cov)

    def to_csv(self) -> str:
        n = self.theory.n
        rows = [("samples", "", "", self.used_samples), ("burn_in", "", "", self.burn_in),
                ("thin", "", "", self.thin)]
        for name, law in (("estimate", self.estimate), ("theory", self.theory), ("stationary", self.stationary)):
            if law is None:
                continue
            rows += [(f"mean_{name}", i, "", repr(float(law.mean[i]))) for i in range(n)]
            rows += [(f"cov_{name}", i, j, repr(float(law.cov[i, j]))) for i in range(n) for j in range(n)]
        rows += [("mean_error", i, "", repr(float(e))) for i, e in enumerate(self.mean_errors)]
        rows.append(("mean_max_error", "", "", repr(float(self.mean_errors.max()))))
        rows.append(("cov_rel_frobenius_theory", "", "", repr(self.cov_error)))
        if self.stationary is not None:
            rows.append(("cov_rel_frobenius_stationary", "", "", repr(self.stationary_cov_error)))
        return _csv_text(["quantity", "i", "j", "value"], rows)

    def samples_csv(self) -> str:
        n = self.samples.shape[1]
        rows = [[k + 1] + [repr(float(x)) for x in row] for k, row in enumerate(self.samples)]
        return _csv_text(["round"] + [f"o{i}" for i in range(n)], rows)


def run_dist(cfg: ExperimentConfig, g: WeightedGraph | None = None) -> DistResult:
    """Gaussian-input run compared against the output-distribution laws.

    Inputs are N(center, diag(sigma)) regardless of ``cfg.input``. Samples are
    the per-round outputs (sync) or the outputs at round boundaries (async).
    """
    g = g if g is not None else build_topology(cfg)
    split = require_dominant(g)
    n = g.n
    v = _center(cfg, n)
    cov = _diag_cov(cfg, n)
    model = InputModel.gaussian(v, cov, _subseed(cfg.seed, TAG_INPUTS))
    burn_in = cfg.burn_in if cfg.burn_in >= 0 else default_burn_in(split.norm_b)
    rounds = burn_in + cfg.samples
    x0 = _uniform(_rng(cfg.seed, TAG_INITIAL), cfg.init_scale, n)
    if cfg.engine == "sync":
        samples = run_sync(g, gen_sequence(model, n, rounds), x0).outputs[1:]
    else:
        layout = AsyncLayout.from_graph(g)
        regs = _uniform(_rng(cfg.seed, TAG_REGISTERS), cfg.registers_scale, layout.num_registers)
        sched = Schedule(n, cfg.policy, cfg.fair_window, _subseed(cfg.seed, TAG_SCHEDULE))
        tr = run_async_rounds(g, model, initial_state(layout, x0, registers=regs), sched, rounds)
        samples = tr.outputs_at_rounds()[1:rounds + 1]
    input_law = DistributionSpec(v, cov)
    est = estimate_output_distribution(samples, burn_in, cfg.thin)
    theory = theoretical_output_distribution(g, input_law)
    stationary = stationary_output_distribution(split, input_law) if cfg.engine == "sync" else None
    return DistResult(estimate=est, theory=theory, stationary=stationary, samples=samples,
                      burn_in=burn_in, thin=cfg.thin)


def write_text(out_dir, name: str, text: str) -> Path:
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
