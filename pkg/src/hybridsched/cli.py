"""Command-line front end: ``hybridsched <subcommand> --config run.json``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

from .baselines import BaselineConfig
from .errors import ConfigError, InvalidArgument, NonFiniteStateError
from .experiments import (
    CompareSpec,
    MPCSpec,
    OracleSpec,
    SolverSpec,
    SweepSpec,
    apply_overrides,
    load_config,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

SUBCOMMANDS = ("solve", "compare", "sweep-horizon", "mpc", "validate-config")


def _defaults(title, cls, skip=()) -> str:
    parts = [f"{f.name}={f.default!r}" for f in fields(cls) if f.name not in skip and not callable(f.default)]
    return f"  {title}: " + ", ".join(parts)


def _epilog() -> str:
    baseline_keys = ("samples", "iterations", "resample_prob", "elite_fraction", "smoothing", "temperature", "noise")
    base = BaselineConfig()
    lines = [
        "config defaults (JSON file, unknown keys are rejected):",
        "  top level: seed=0, repetitions=1, output_dir='runs'",
        "  system: system='cartpole' (or 'double_integrator', 'table'), horizon=100;"
        " cartpole dt=0.05, mode_count=5, u_min=-10, u_max=10, substeps=8",
        _defaults("solver", SolverSpec),
        "  baselines[i]: method (hybrid, random-shooting, cem, mppi), "
        + ", ".join(f"{k}={getattr(base, k)!r}" for k in baseline_keys),
        _defaults("oracle", OracleSpec),
        _defaults("compare", CompareSpec, skip=("horizons",)) + ", horizons=[system.horizon]",
        _defaults("sweep", SweepSpec),
        _defaults("mpc", MPCSpec),
        "exit codes: 0 success, 2 config error, 3 io error, 4 numerical failure",
    ]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridsched",
        description="Run hybrid mode-scheduling experiments from a JSON config.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, epilog=_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        if name == "validate-config":
            continue
        p.add_argument("--out", default=None, help="output root (default: output_dir from the config)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--threads", type=int, default=1, help="parallel repetitions (does not change results)")
        p.add_argument("--budget", type=int, default=None, help="override the rollout budget")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate-config":
            print(f"ok: {args.config} ({cfg.experiment}, hash {cfg.config_hash()[:12]})")
            return EXIT_OK
        if args.command != cfg.experiment:
            raise ConfigError(f"config describes a {cfg.experiment!r} experiment, not {args.command!r}", "experiment")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed must be >= 0", "--seed")
        if args.threads < 1:
            raise ConfigError("threads must be >= 1", "--threads")
        cfg = apply_overrides(cfg, seed=args.seed, budget=args.budget)
        directory, manifest = run_experiment(cfg, args.out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonFiniteStateError, FloatingPointError, InvalidArgument) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(directory)
    for name, rows in sorted(manifest.files.items()):
        print(f"  {name}" if rows is None else f"  {name} ({rows} rows)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
