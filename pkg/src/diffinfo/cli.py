"""Command line: ``diffinfo run|validate <config>`` and ``diffinfo report <manifest>``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffinfo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", type=Path)
    run.add_argument("--seed", type=int, default=None, help="override the master seed")
    run.add_argument("--out", type=Path, default=None, help="override the output directory")
    run.add_argument("--threads", type=int, default=1,
                     help="parallel worker processes for independent cells (1 = fully serial)")
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config", type=Path)
    rep = sub.add_parser("report", help="print totals of a finished run")
    rep.add_argument("manifest", type=Path)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    # one BLAS thread per process keeps reductions in a fixed order
    for var in _THREAD_VARS:
        os.environ.setdefault(var, "1")
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")

    from dataclasses import replace

    from .config import ConfigError, load_config
    from .runner import NumericalFailure, ReproducibilityError, format_report, run_experiment

    if args.command == "report":
        try:
            print(format_report(args.manifest))
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot read report: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok ({cfg.experiment})")
            return EXIT_OK
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        result = run_experiment(cfg, args.out, args.threads, config_dir=args.config.parent)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, ReproducibilityError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {len(result.files)} files to {result.out_dir}; manifest {result.manifest}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
