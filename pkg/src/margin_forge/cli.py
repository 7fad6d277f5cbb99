"""Command-line entry point: ``run``, ``compare`` and ``plot``.

Exit codes: 0 success, 2 bad configuration or input, 3 training failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigurationError, InvalidInputError, ParseError, TrainingDivergedError
from .experiment import OUT_ENV, compare, load_config, run_experiment, write_compare_csv
from .plotting import plot_per_class

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="margin-forge", description="Train and compare margin losses on class-imbalanced data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and evaluate one configuration")
    p_run.add_argument("config")
    p_run.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")

    p_cmp = sub.add_parser("compare", help="run several configurations over several seeds")
    p_cmp.add_argument("configs", nargs="+")
    p_cmp.add_argument("--seeds", type=_parse_seeds, default=[0])
    p_cmp.add_argument("--out", default=None, help="directory for comparison.csv and run artifacts")
    p_cmp.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")

    p_plot = sub.add_parser("plot", help="draw a per-class error SVG from per_class.csv")
    p_plot.add_argument("csv")
    p_plot.add_argument("svg")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    summary = run_experiment(cfg)
    print(f"{summary['name']}: overall top-1 error {summary['overall_error']:.4f}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    if len(args.configs) < 2:
        raise ConfigurationError("compare needs at least two configs")
    configs = [load_config(path, args.overrides) for path in args.configs]
    out = Path(args.out or os.environ.get(OUT_ENV) or "runs/compare")
    out.mkdir(parents=True, exist_ok=True)
    rows, failures = compare(configs, args.seeds, out)
    write_compare_csv(rows, out / "comparison.csv")
    for row in rows:
        print(f"{row['method']}: overall {row['overall_mean']:.4f} +/- {row['overall_std']:.4f}, "
              f"minority {row['minority_mean']:.4f} +/- {row['minority_std']:.4f}")
    return EXIT_DIVERGED if failures else EXIT_OK


def _cmd_plot(args) -> int:
    plot_per_class(args.csv, args.svg)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "compare": _cmd_compare, "plot": _cmd_plot}[args.command]
    try:
        return handler(args)
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, InvalidInputError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
