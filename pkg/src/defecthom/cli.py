"""Command-line entry point: one subcommand per experiment kind.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import KINDS, ConfigError, load_config, parse_config
from .runner import emit_report, run_many


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="defecthom",
                                description="Homogenization experiments with local defects.")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind, help=f"run a {kind} experiment")
        s.add_argument("--config", action="append", metavar="PATH",
                       help="TOML configuration (repeatable; items run independently)")
        s.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
        s.add_argument("--threads", type=int, default=1, metavar="N",
                       help="independent items run concurrently")
        s.add_argument("--seed", type=int, metavar="S", help="overrides the config seed")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        if args.config:
            cfgs = [load_config(p, args.kind, args.seed) for p in args.config]
        else:
            cfgs = [parse_config({}, args.kind, args.seed)]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = args.out or cfgs[0].output
    records = run_many(cfgs, args.threads)
    index = emit_report(records, out)
    for r in records:
        for name, ok in r.verdicts.items():
            print(f"{r.kind} {r.config_hash} {name}: {'PASS' if ok else 'FAIL'}")
    print(f"report written to {os.path.abspath(out)}")
    return 0 if index["passed"] else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
