"""Command line entry point: ``ssiter {gen-topology,run,heatmap,dist}``.

Exit codes: 0 ok, 1 usage or parse error, 2 envelope violation detected,
3 numerical refusal (not contractive, singular, dominance violated).
"""
from __future__ import annotations

import argparse
import sys
import warnings

from ssiter.config import ENGINES, POLICIES, load_config
from ssiter.errors import (BadCovariance, ConfigError, DimensionMismatch, DominanceViolated,
                           NotContractive, ParseError, Singular, TooFewSamples, ZeroDiagonal)
from ssiter.experiments import run_dist, run_experiment, run_heatmap, write_text
from ssiter.linalg import format_matrix, jacobi_split
from ssiter.topology import build_circle, build_unit_disc, load_graph

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VIOLATION = 2
EXIT_REFUSED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--engine", choices=ENGINES)
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--fair-window", type=int, help="RandomFair window multiplier K")
    p.add_argument("--trials", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--workers", type=int, help="worker processes for the heatmap grid")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssiter", description="Self-stabilizing iterative solver simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen-topology", help="write a system matrix and print its norms")
    gen.add_argument("kind", choices=("circle", "unit-disc", "file"))
    gen.add_argument("--n", type=int, default=100)
    gen.add_argument("--diag", type=float, default=3.0)
    gen.add_argument("--off", type=float, default=-1.0)
    gen.add_argument("--side", type=float, default=10.0)
    gen.add_argument("--radius", type=float, default=1.0)
    gen.add_argument("--ratio", type=float, default=0.97)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--matrix", help="input matrix file (kind=file)")
    gen.add_argument("--out", help="matrix file to write (default: stdout)")

    for name, text in (("run", "single run with envelope check"),
                       ("heatmap", "error grid over (delta, iterations)"),
                       ("dist", "Gaussian-input output distribution report")):
        _add_common(sub.add_parser(name, help=text))
    return parser


def _overrides(args) -> dict[str, str]:
    pairs = {}
    for flag in ("seed", "out", "engine", "policy", "fair_window", "trials", "burn_in", "workers"):
        val = getattr(args, flag, None)
        if val is not None:
            pairs[flag] = str(val)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v
    return pairs


def cmd_gen_topology(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.kind == "circle":
            g = build_circle(args.n, args.diag, args.off)
        elif args.kind == "unit-disc":
            g = build_unit_disc(args.n, args.side, args.radius, args.ratio, args.seed)
        else:
            if not args.matrix:
                raise ConfigError("gen-topology file needs --matrix PATH")
            g = load_graph(args.matrix)
    text = format_matrix(g.w)
    if args.out:
        write_text(".", args.out, text)
    else:
        sys.stdout.write(text)
    split = jacobi_split(g.w)
    info = (f"norm_a={split.norm_a!r} norm_b={split.norm_b!r} "
            f"dominant={g.dominant} connected={g.connected}")
    print(info, file=sys.stderr if not args.out else sys.stdout)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return EXIT_OK


def cmd_run(cfg) -> int:
    res = run_experiment(cfg)
    write_text(cfg.out, "config.txt", cfg.echo())
    write_text(cfg.out, "trace.csv", res.trace_csv)
    write_text(cfg.out, "bound.csv", res.report.to_csv())
    if res.step_log_csv is not None:
        write_text(cfg.out, "steps.csv", res.step_log_csv)
    print(res.summary())
    return EXIT_OK if res.ok else EXIT_VIOLATION


def cmd_heatmap(cfg) -> int:
    grid = run_heatmap(cfg)
    write_text(cfg.out, "config.txt", cfg.echo())
    write_text(cfg.out, "heatmap.csv", grid.to_csv())
    print(f"cells={grid.mean.size} trials={grid.trials} "
          f"monotonicity_violations={len(grid.monotonicity_violations())}")
    return EXIT_OK


def cmd_dist(cfg) -> int:
    res = run_dist(cfg)
    write_text(cfg.out, "config.txt", cfg.echo())
    write_text(cfg.out, "dist.csv", res.to_csv())
    if cfg.write_samples:
        write_text(cfg.out, "samples.csv", res.samples_csv())
    line = (f"samples={res.used_samples} burn_in={res.burn_in} "
            f"mean_max_error={float(res.mean_errors.max())!r} cov_rel_frobenius_theory={res.cov_error!r}")
    if res.stationary is not None:
        line += f" cov_rel_frobenius_stationary={res.stationary_cov_error!r}"
    print(line)
    return EXIT_OK


_COMMANDS = {"run": cmd_run, "heatmap": cmd_heatmap, "dist": cmd_dist}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-topology":
            return cmd_gen_topology(args)
        cfg = load_config(args.config, _overrides(args))
        return _COMMANDS[args.command](cfg)
    except (NotContractive, Singular, DominanceViolated, ZeroDiagonal) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (ConfigError, ParseError, DimensionMismatch, BadCovariance, TooFewSamples, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
