"""Command-line entry point: run, aggregate, heatmap, compare.

Exit codes: 0 success, 1 config error, 2 run failure, 3 comparison assertion failed.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness

EXIT_OK, EXIT_CONFIG, EXIT_RUN, EXIT_COMPARE = 0, 1, 2, 3


def _cmd_run(args) -> int:
    try:
        config = harness.load_config(args.config)
    except (OSError, harness.ConfigError) as exc:
        print(f"config error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers:
        config.workers = args.workers
    if args.no_figures:
        config.figures = False
    manifest = harness.run_experiment(config)
    failed = [r["key"] for r in manifest["runs"] if r["status"] != "ok"]
    print(f"{len(manifest['runs'])} runs written to {config.output_dir}")
    if failed:
        print("failed runs: " + ", ".join(failed), file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def _cmd_aggregate(args) -> int:
    try:
        paths = harness.aggregate(args.dir)
    except FileNotFoundError as exc:
        print(exc, file=sys.stderr)
        return EXIT_RUN
    for p in paths:
        print(p)
    return EXIT_OK


def _cmd_heatmap(args) -> int:
    try:
        print(harness.heatmap_run(args.run, render=not args.no_figures))
    except OSError as exc:
        print(exc, file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def _cmd_compare(args) -> int:
    try:
        report = harness.compare(args.dir_a, args.dir_b, args.metric)
    except (OSError, ValueError) as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return EXIT_RUN
    sys.stdout.write(report.to_text())
    if args.expect == "greater" and not report.median_gap > 0:
        return EXIT_COMPARE
    if args.expect == "geq" and not report.median_gap >= 0:
        return EXIT_COMPARE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maxentstate", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config (JSON)")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=0, help="override parallel worker count")
    r.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    r.set_defaults(func=_cmd_run)

    a = sub.add_parser("aggregate", help="recompute aggregate curves of an experiment directory")
    a.add_argument("dir")
    a.set_defaults(func=_cmd_aggregate)

    h = sub.add_parser("heatmap", help="normalized heatmap of one run directory")
    h.add_argument("run")
    h.add_argument("--no-figures", action="store_true")
    h.set_defaults(func=_cmd_heatmap)

    c = sub.add_parser("compare", help="per-seed comparison of two run sets")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("--metric", choices=harness.METRICS, default="final")
    c.add_argument("--expect", choices=("greater", "geq"),
                   help="exit 3 unless median(A) - median(B) satisfies this")
    c.set_defaults(func=_cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
