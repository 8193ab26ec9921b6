"""Command-line entry point: ``pacbandit run|suite|slope``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .harness import EXIT_CONFIG, EXIT_IO, ConfigError


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: all CPUs)")
    p.add_argument("--out", default=None, help="output directory (overrides output_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pacbandit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run every suite listed in the config"))
    p = sub.add_parser("suite", help="run a single suite")
    p.add_argument("name", choices=harness.SUITES)
    _common(p)
    p = sub.add_parser("slope", help="log-log slope of the median cumulative regret")
    p.add_argument("--input", required=True, help="regret.csv written by `run`")
    p.add_argument("--tmin", type=float, required=True)
    p.add_argument("--tmax", type=float, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "slope":
        try:
            ts, med = harness.read_regret_csv(args.input)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        try:
            print(f"{harness.estimate_regret_slope(ts, med, args.tmin, args.tmax):.6f}")
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return 0

    try:
        cfg = harness.load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    threads = args.threads or harness.default_threads()
    suites = [args.name] if args.command == "suite" else None
    try:
        summary, code = harness.run(cfg, seed=args.seed, threads=threads, out_dir=args.out, suites=suites)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    for name, res in summary["suites"].items():
        print(f"{name:9s} {'PASS' if res['pass'] else 'FAIL'}  worst rate {res['rate']:.4g} (n={res['n']})")
        for cname, c in res["checks"].items():
            if not c["pass"]:
                print(f"  failed: {cname} value={c['value']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
