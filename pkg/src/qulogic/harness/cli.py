"""Command-line entry point.

    qulogic run <config> [--seed S] [--batch B] [--out FILE] [--format records|human]
    qulogic validate <config>
    qulogic report <raw records> --format human

<config> is a YAML file or the name of a shipped scenario.  Exit status is
0 on success, 1 for a bad config and 2 for an internal fault.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config, shipped_scenarios
from .report import FORMATS, emit_report, parse_records
from .runner import run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_FAULT = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qulogic", description="Run quantum ledger scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario batch")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--batch", type=int)
    run.add_argument("--out", type=Path, help="write the report here instead of stdout")
    run.add_argument("--format", choices=FORMATS, default="records")

    val = sub.add_parser("validate", help="check a config and list every problem")
    val.add_argument("config")

    rep = sub.add_parser("report", help="re-render a records file")
    rep.add_argument("raw", type=Path)
    rep.add_argument("--format", choices=FORMATS, default="human")
    rep.add_argument("--out", type=Path)

    sub.add_parser("list", help="list shipped scenarios")
    return parser


def _write(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            print("\n".join(shipped_scenarios()))
        elif args.command == "validate":
            cfg = load_config(args.config)
            print(f"{cfg.name}: ok")
        elif args.command == "run":
            cfg = load_config(args.config).with_overrides(args.seed, args.batch)
            _write(emit_report(run_scenario(cfg), args.format), args.out)
        elif args.command == "report":
            _write(emit_report(parse_records(args.raw.read_text()), args.format), args.out)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is an internal fault
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
