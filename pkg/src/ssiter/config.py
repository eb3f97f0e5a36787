"""Experiment configuration: a flat ``key = value`` text file plus overrides.

Lines starting with ``#`` and blank lines are ignored. List values are
comma separated. Keys use underscores; dashes are accepted too.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

import numpy as np

from ssiter.errors import ConfigError

TOPOLOGIES = ("circle", "unit-disc", "file")
INPUT_KINDS = ("box", "adversarial", "constant", "gaussian")
ENGINES = ("sync", "async")
POLICIES = ("round-robin", "random-fair")

# excluded from the echoed config so serial and parallel runs write identical files
_NOT_ECHOED = ("workers", "out")


def default_deltas() -> tuple[float, ...]:
    return tuple(float(x) for x in np.logspace(-3, 0, 8))


def default_iterations() -> tuple[int, ...]:
    return tuple(2 ** k for k in range(11))


@dataclass
class ExperimentConfig:
    # topology
    topology: str = "circle"
    n: int = 100
    diag: float = 3.0
    off: float = -1.0
    side: float = 10.0
    radius: float = 1.0
    ratio: float = 0.97
    topology_seed: int = 0
    matrix: str = ""
    # inputs
    input: str = "box"
    delta: float = 0.1
    center: tuple[float, ...] = ()
    sigma: tuple[float, ...] = (1.0,)
    # engine
    engine: str = "sync"
    policy: str = "random-fair"
    fair_window: int = 5
    rounds: int = 200
    init_scale: float = 1.0
    register_scale: float = -1.0
    step_log: bool = False
    # heatmap grid
    deltas: tuple[float, ...] = field(default_factory=default_deltas)
    iterations: tuple[int, ...] = field(default_factory=default_iterations)
    trials: int = 50
    # distribution experiment
    burn_in: int = -1
    samples: int = 100000
    thin: int = 1
    write_samples: bool = False
    # bookkeeping
    seed: int = 0
    workers: int = 1
    out: str = "out"

    def validate(self) -> "ExperimentConfig":
        checks = [
            (self.topology in TOPOLOGIES, f"topology must be one of {TOPOLOGIES}"),
            (self.topology != "file" or bool(self.matrix), "topology=file needs matrix=<path>"),
            (self.input in INPUT_KINDS, f"input must be one of {INPUT_KINDS}"),
            (self.engine in ENGINES, f"engine must be one of {ENGINES}"),
            (self.policy in POLICIES, f"policy must be one of {POLICIES}"),
            (self.fair_window >= 1, "fair_window must be >= 1"),
            (self.rounds >= 1, "rounds must be >= 1"),
            (self.delta >= 0, "delta must be >= 0"),
            (len(self.deltas) > 0, "deltas must be nonempty"),
            (len(self.iterations) > 0, "iterations must be nonempty"),
            (all(d >= 0 for d in self.deltas), "deltas must be >= 0"),
            (all(k >= 0 for k in self.iterations), "iterations must be >= 0"),
            (self.trials >= 1, "trials must be >= 1"),
            (self.samples >= 2, "samples must be >= 2"),
            (self.thin >= 1, "thin must be >= 1"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.init_scale >= 0, "init_scale must be >= 0"),
            (all(s >= 0 for s in self.sigma), "sigma entries are variances and must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    @property
    def registers_scale(self) -> float:
        return self.init_scale if self.register_scale < 0 else self.register_scale

    def echo(self) -> str:
        """Resolved configuration in the input format, seeds included."""
        lines = []
        for f in fields(self):
            if f.name in _NOT_ECHOED:
                continue
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _format_value(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, tuple):
        return ",".join(_format_value(e) for e in x)
    if isinstance(x, float):
        return repr(x)
    return str(x)


_HINTS = get_type_hints(ExperimentConfig)


def _convert(key: str, raw: str):
    hint = _HINTS[key]
    raw = raw.strip()
    if hint is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if hint is str:
        return raw
    # tuple[float, ...] / tuple[int, ...]
    elem = hint.__args__[0]
    if not raw:
        return ()
    return tuple(elem(p.strip()) for p in raw.split(","))


def apply_overrides(cfg: ExperimentConfig, pairs: dict[str, str], line_numbers: dict | None = None
                    ) -> ExperimentConfig:
    updates = {}
    for raw_key, raw in pairs.items():
        key = raw_key.strip().replace("-", "_")
        line = (line_numbers or {}).get(raw_key)
        if key not in _HINTS:
            raise ConfigError(f"unknown config key {raw_key!r}", line)
        try:
            updates[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", line) from None
    return dataclasses.replace(cfg, **updates)


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    pairs: dict[str, str] = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"expected key = value, got {s!r}", lineno)
        k, v = s.split("=", 1)
        k = k.strip()
        if k in pairs:
            raise ConfigError(f"duplicate key {k!r}", lineno)
        pairs[k] = v
        lines[k] = lineno
    return apply_overrides(base or ExperimentConfig(), pairs, lines)


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        cfg = parse_config_text(text, cfg)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()
