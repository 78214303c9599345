"""Command-line entry point: ``adleak {sweep,bounds,audit,game,plot}``.

Exit codes: 0 success, 2 configuration error, 3 ceiling or infeasible
instance, 4 internal error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments
from .errors import (
    CapacityError,
    CeilingError,
    ConfigurationError,
    DegenerateInstanceError,
    DimensionError,
    InfeasibleSecretError,
    ModelError,
    UndefinedBoundsError,
    UndefinedSampleComplexityError,
)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 2, 3, 4
SWEEP_KINDS = {"tv": "tv_sweep", "epsilon": "epsilon_sweep", "alpha_e": "alpha_e_sweep", "alpha_t": "alpha_t_sweep"}


def _common(p: argparse.ArgumentParser, seed_required: bool = False):
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--seed", type=int, required=seed_required, help="master seed")
    p.add_argument("--ell", type=int)
    p.add_argument("--test-bit", type=int)
    p.add_argument("--level", type=float)
    p.add_argument("--target-power", type=float)
    p.add_argument("--trials", type=int, dest="trials_per_point", help="Monte-Carlo trials per power estimate")
    p.add_argument("--rounds", type=int, dest="rounds_per_user")
    p.add_argument("--alt-marginal", type=float, help="D1 marginal of b_test for single-point commands")
    p.add_argument("--workers", type=int)
    p.add_argument("--ceiling", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adleak", description="Attribute leakage in advertising ecosystems.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="sample-complexity sweep to CSV")
    p.add_argument("kind", choices=sorted(SWEEP_KINDS))
    _common(p, seed_required=True)
    p.add_argument("--output", type=Path, help="CSV path (default: stdout)")
    p.add_argument("--plot", type=Path, help="also write an SVG plot here")

    p = sub.add_parser("bounds", help="Hellinger bounds and expansion factors over the TV grid")
    _common(p)

    p = sub.add_parser("audit", help="Pufferfish verdicts on the enumerable miniature")
    _common(p)
    p.add_argument("--epsilons", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    p.add_argument("--records", type=int, default=4)
    p.add_argument("--game-n", type=int, help="also play the distinguishing game at this campaign size")
    p.add_argument("--game-trials", type=int, default=2000)

    p = sub.add_parser("game", help="estimate the adversary's advantage at one campaign size")
    _common(p)
    p.add_argument("--arm", default="non-private")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--game-trials", type=int, default=2000)

    p = sub.add_parser("plot", help="SVG line chart from a sweep CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--output", type=Path, required=True)
    return parser


def _config(args, experiment: str) -> experiments.ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in
                 ("ell", "test_bit", "level", "target_power", "trials_per_point", "rounds_per_user",
                  "alt_marginal", "workers", "ceiling")}
    overrides["experiment"] = experiment
    overrides["master_seed"] = args.seed
    if args.config is not None:
        cfg = experiments.load_config(args.config, overrides)
        if cfg.experiment != experiment and args.command == "sweep":
            raise ConfigurationError(f"config is a {cfg.experiment} config, not {experiment}")
        return cfg
    if overrides["master_seed"] is None:
        overrides["master_seed"] = 0
    return experiments.config_from_dict({k: v for k, v in overrides.items() if v is not None})


def _run(args) -> int:
    if args.command == "plot":
        experiments.emit_plot(args.csv, args.output)
        return EXIT_OK
    if args.command == "sweep":
        cfg = _config(args, SWEEP_KINDS[args.kind])
        rows = experiments.run_experiment(cfg)
        if args.output:
            experiments.write_csv(rows, args.output)
        else:
            sys.stdout.write(experiments.rows_to_csv(rows))
        if args.plot:
            if not args.output:
                raise ConfigurationError("--plot needs --output")
            experiments.emit_plot(args.output, args.plot)
        return EXIT_INFEASIBLE if any(r["minimal_n"].startswith(">") for r in rows) else EXIT_OK
    if args.command == "bounds":
        print(experiments.json_dumps(experiments.bounds_report(_config(args, "bounds"))))
        return EXIT_OK
    if args.command == "audit":
        cfg = _config(args, "audit")
        report = experiments.audit_report(cfg, tuple(args.epsilons), args.records, args.game_n, args.game_trials)
        print(experiments.json_dumps(report))
        return EXIT_OK
    if args.command == "game":
        cfg = _config(args, "tv_sweep")
        print(experiments.json_dumps(experiments.game_report(cfg, args.arm, args.n, args.game_trials)))
        return EXIT_OK
    raise ConfigurationError(f"unknown command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (CeilingError, InfeasibleSecretError, UndefinedSampleComplexityError, UndefinedBoundsError,
            DegenerateInstanceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigurationError, DimensionError, ModelError, CapacityError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
