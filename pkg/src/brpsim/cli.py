"""Command-line entry point: ``brpsim generate-fleet | run | report``.

Exit codes: 0 success, 2 validation error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .fleet import FleetError
from .grid import GridError
from .market import MarketDataError
from .metrics import emit_report, load_cases, write_case_dir
from .milp import SolverError
from .orchestrator import CASES, CaseSpec, StageError, run_case, write_group_fleets
from .settlement import SettlementError

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER = 0, 2, 3
log = logging.getLogger("brpsim")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brpsim", description="BRP imbalance-pricing simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-fleet", help="write one fleet file per EV group")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)

    r = sub.add_parser("run", help="simulate one case")
    r.add_argument("--config", required=True)
    r.add_argument("--case", required=True, choices=sorted(CASES))
    r.add_argument("--scope", default="none", choices=("none", "global", "local"))
    r.add_argument("--out", required=True)
    r.add_argument("--workers", type=int, default=None, help="override the configured worker count")

    rep = sub.add_parser("report", help="tables and plots from run directories")
    rep.add_argument("--in", dest="inp", required=True)
    rep.add_argument("--format", default="csv", choices=("csv", "svg"))
    rep.add_argument("--out", default=None, help="defaults to the input directory")
    return p


def case_dir_name(spec: CaseSpec) -> str:
    return spec.label.replace("/", "-")


def _run(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
        cfg.validate()
    spec = CaseSpec.from_name(args.case, args.scope)
    result = run_case(cfg, spec)
    out = write_case_dir(result, Path(args.out) / case_dir_name(spec), cfg.to_dict())
    print(f"{spec.label}: benefit {result.benefit():.2f} EUR -> {out}")
    return EXIT_OK


def _report(args) -> int:
    cases = load_cases(args.inp)
    paths = emit_report(cases, args.out or args.inp, args.format)
    for p in paths:
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "generate-fleet":
            for p in write_group_fleets(load_config(args.config), args.out):
                print(p)
            return EXIT_OK
        if args.command == "run":
            return _run(args)
        return _report(args)
    except (SolverError, StageError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, MarketDataError, FleetError, GridError, SettlementError, ValueError,
            FileNotFoundError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

