"""Command line entry point.

    biwave run <scenario> [--config FILE] --out DIR [--real-part]
    biwave check
    biwave propcheck
    biwave config <scenario>          print the reference config
    biwave verify DIR                 re-derive a run's assertions from its CSVs

Exit status is 0 iff every assertion passes, 1 if any fails and 2 for
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from .checks import invariant_suite, propagator_suite
from .config import SCENARIOS, ScenarioConfig, default_config, load_config
from .errors import BiwaveError
from .scenarios import rederive, run_scenario, write_report


def _print_assertions(assertions) -> bool:
    ok = True
    for a in assertions:
        print(a.line())
        ok = ok and a.passed
    return ok


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else ScenarioConfig.from_json(default_config(args.scenario))
    if cfg.name != args.scenario:
        raise BiwaveError(f"config is for scenario {cfg.name!r}, not {args.scenario!r}")
    report = run_scenario(cfg)
    out = write_report(report, args.out, real_part=args.real_part)
    for flag in report.flags:
        print(f"flag: {flag}")
    ok = _print_assertions(report.assertions)
    print(f"{cfg.name}: {'PASS' if ok else 'FAIL'} -> {out}")
    return 0 if ok else 1


def _cmd_suite(suite, label) -> int:
    ok = _print_assertions(suite())
    print(f"{label}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_config(args) -> int:
    print(json.dumps(default_config(args.scenario), indent=2))
    return 0


def _close(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return abs(a - b) <= 1e-9 * max(1.0, abs(a), abs(b))


def _cmd_verify(args) -> int:
    ok = True
    for name, (recomputed, reported) in rederive(args.dir).items():
        rep = float("nan") if reported is None else reported
        same = _close(recomputed, rep)
        ok = ok and same
        print(f"[{'OK' if same else 'MISMATCH'}] {name}: recomputed {recomputed:.12g}, reported {rep:.12g}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biwave", description="Two-boundary density toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write CSV/JSON output")
    run.add_argument("scenario", choices=SCENARIOS)
    run.add_argument("--config", help="scenario JSON (schema 1); defaults to the reference config")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--real-part", action="store_true", help="write only Re of each density")
    run.set_defaults(func=_cmd_run)

    check = sub.add_parser("check", help="run the invariant suite")
    check.set_defaults(func=lambda a: _cmd_suite(invariant_suite, "check"))

    prop = sub.add_parser("propcheck", help="run the propagator oracles")
    prop.set_defaults(func=lambda a: _cmd_suite(propagator_suite, "propcheck"))

    cfg = sub.add_parser("config", help="print a reference config")
    cfg.add_argument("scenario", choices=SCENARIOS)
    cfg.set_defaults(func=_cmd_config)

    verify = sub.add_parser("verify", help="re-derive assertions from a run directory")
    verify.add_argument("dir")
    verify.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BiwaveError, OSError) as exc:
        print(f"biwave: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
