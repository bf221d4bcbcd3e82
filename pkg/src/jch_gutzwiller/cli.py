"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 some points failed (see the
``error`` column), 3 fatal runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .sweep import (ConfigError, count_failures, read_config, run_boundary, run_observables,
                    run_solve, run_sweep)

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--out", help="output directory (overrides run.out)")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override a config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="jch-gw", description="Gutzwiller mean-field solver "
                                     "for Jaynes-Cummings-Hubbard lattices in a synthetic field")
    sub = parser.add_subparsers(dest="mode", required=True)
    sub.add_parser("solve", parents=[common], help="solve one parameter point")
    sub.add_parser("sweep", parents=[common], help="solve a parameter grid")
    sub.add_parser("boundary", parents=[common], help="perturbative kappa_c(alpha) table")
    sub.add_parser("observables", parents=[common], help="analyse a saved state")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = read_config(args.config, args.overrides, mode=args.mode, out=args.out,
                          workers=args.workers, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if cfg.mode == "boundary":
            path = run_boundary(cfg)
        elif cfg.mode == "observables":
            path = run_observables(cfg)
        else:
            path = run_solve(cfg) if cfg.mode == "solve" else run_sweep(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        logging.getLogger(__name__).exception("fatal error")
        print(f"fatal: {exc}", file=sys.stderr)
        return EXIT_FATAL
    print(path)
    if path.name in ("results.csv", "boundary.csv") and count_failures(path):
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
