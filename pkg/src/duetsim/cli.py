"""Command line: ``duetsim run|sweep|check|report``.

``run`` and ``sweep`` exit 0 iff no run reported a coherence-invariant
violation; ``check`` exits 0 iff the trace is clean.  ``DUETSIM_WORKERS``
sets how many worker processes run sweep cells.
"""

from __future__ import annotations

import argparse
import os
import sys

from .checker import check_trace, format_report
from .config import AREA_DEFAULTS, ConfigError, load_config
from .experiment import format_report as format_speedups
from .experiment import read_csv, report, run_config, to_csv, violation_count
from .trace import load_trace


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _run(args, overrides: list[str]) -> int:
    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.trace_dir:
        os.makedirs(args.trace_dir, exist_ok=True)
        cfg.trace_dir = args.trace_dir
    rows = run_config(cfg, args.workers)
    _write(to_csv(rows, cfg.sha256), args.output)
    bad = violation_count(rows)
    failed = sum(1 for r in rows if r["ok"] == "0")
    if failed:
        print(f"{failed} run(s) did not produce verified results", file=sys.stderr)
    if bad:
        print(f"{bad} invariant violation(s)", file=sys.stderr)
        return 1
    return 0


def cmd_run(args) -> int:
    return _run(args, [])


def cmd_sweep(args) -> int:
    return _run(args, args.set or [])


def cmd_check(args) -> int:
    try:
        events = load_trace(args.trace)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    violations = check_trace(events, args.line_bytes)
    print(format_report(violations))
    return 1 if violations else 0


def cmd_report(args) -> int:
    rows = []
    try:
        for path in args.csv:
            rows += read_csv(path)[1]
        area = load_config(args.config).area if args.config else dict(AREA_DEFAULTS)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        lines = report(rows, area)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(format_speedups(lines))
    return 1 if violation_count(rows) else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="duetsim", description="Manycore + eFPGA simulator with Duet adapters.")
    sub = ap.add_subparsers(dest="command", required=True)

    def runner(name: str, help: str):
        p = sub.add_parser(name, help=help)
        p.add_argument("config", help="experiment INI file")
        p.add_argument("-o", "--output", help="CSV path (default stdout)")
        p.add_argument("-j", "--workers", type=int, help="worker processes (default $DUETSIM_WORKERS or 1)")
        p.add_argument("--trace-dir", help="save each benchmark run's trace here as JSON lines")
        return p

    runner("run", "run every cell of an experiment").set_defaults(func=cmd_run)
    p = runner("sweep", "run an experiment with section.key=value overrides")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key (repeatable)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="audit a saved trace for coherence-invariant violations")
    p.add_argument("trace", help="JSON-lines trace written by run --trace-dir")
    p.add_argument("--line-bytes", type=int, default=16)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("report", help="speedup and normalized ADP table from result CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--config", help="take the area constants from this experiment file")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
