"""Command line entry point: ``polyuq <experiment> --config FILE [--seed N] [--out DIR]``."""
import argparse
import logging
import sys

from .config import EXPERIMENTS, bundled_config, load_config
from .exceptions import (ConfigError, MeshFormatError, MeshTopologyError, NumericalError,
                         PolyUQError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="polyuq",
        description="Run a virtual element uncertainty quantification experiment.")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="YAML configuration file (defaults to the bundled "
                                         "config of the experiment)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--threads", type=int, help="override the number of worker threads")
    parser.add_argument("-q", "--quiet", action="store_true", help="only print errors")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which matches the config error code
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    from .experiments import run_experiment
    try:
        path = args.config or bundled_config(args.experiment)
        cfg = load_config(path, {"seed": args.seed, "threads": args.threads})
        if cfg.experiment != args.experiment:
            raise ConfigError(f"config {path} is for {cfg.experiment!r}, "
                              f"not {args.experiment!r}")
        out = args.out or cfg.output
        summary = run_experiment(cfg, out)
    except (ConfigError, MeshFormatError, MeshTopologyError, OSError) as exc:
        print(f"polyuq: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, PolyUQError, ArithmeticError, OverflowError) as exc:
        print(f"polyuq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if not args.quiet:
        print(f"wrote {summary['experiment']} results to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
