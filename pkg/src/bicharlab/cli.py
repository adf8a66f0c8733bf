"""Command line interface.

    bicharlab run --config <path> --out <dir> [--only <stage>]
                  [--ladder-top <k>]

Exit codes: 0 all enabled checks pass, 1 check failure, 2 abort or
invalid configuration.  BICHARLAB_MAX_THREADS caps concurrent ladder
rungs (default 1).
"""

from __future__ import annotations

import argparse
import sys

from .errors import BicharLabError, ConfigError
from .runner import STAGES, ExperimentConfig, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bicharlab",
        description="Trace semibicharacteristics, build quasimodes and "
                    "stress-test the a-priori solvability estimate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True, help="JSON config path")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--only", choices=STAGES, default=None,
                     help="stop the pipeline after this stage")
    run.add_argument("--ladder-top", type=int, default=None, metavar="K",
                     help="drop ladder rungs above 2^K")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        try:
            cfg = ExperimentConfig.load(args.config)
            code = run_experiment(cfg, args.out, only_stage=args.only,
                                  ladder_top=args.ladder_top)
        except (ConfigError, FileNotFoundError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except BicharLabError as exc:
            print(f"aborted: {exc}", file=sys.stderr)
            return 2
        return code
    return 2


if __name__ == "__main__":
    sys.exit(main())
