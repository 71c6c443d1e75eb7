"""Command line entry point: ``tiltrelay {plan,simulate,compare,validate} CONFIG``.

Exit codes: 0 success, 1 solver did not converge (outputs are still
written), 2 invalid input. Failures print a JSON error report on stderr and,
when an output directory is known, also write it to ``error.json`` there.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import (MaxIterationsExceeded, ParseError, SolverDiverged, TiltRelayError,
                     ValidationError)
from .experiments import RUNNERS, write_json
from .scenario import load_scenario

EXIT_OK, EXIT_NONCONVERGED, EXIT_INVALID = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tiltrelay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("plan", "optimize the relay trajectory"),
                        ("simulate", "closed-loop NMPC run"),
                        ("compare", "plan vs NMPC vs straight-line baseline"),
                        ("validate", "check a config and print it with defaults filled in")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="scenario YAML file")
        p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
        p.add_argument("--out-dir", default=None, help="override experiment.output_dir")
        p.add_argument("--quiet", action="store_true", help="only print errors")
        if name == "compare":
            p.add_argument("--workers", type=int, default=2, help="processes for the two NMPC runs")
    return parser


def _error_report(exc: BaseException, code: int) -> dict:
    report = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ValidationError):
        report["problems"] = exc.problems
    return report


def _exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (MaxIterationsExceeded, SolverDiverged)):
        return EXIT_NONCONVERGED
    return EXIT_INVALID


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = args.out_dir
    try:
        cfg = load_scenario(args.config).with_overrides(seed=args.seed, output_dir=args.out_dir)
        out_dir = cfg["experiment"]["output_dir"]
        if args.command == "validate":
            if not args.quiet:
                sys.stdout.write(cfg.echo())
            return EXIT_OK
        kwargs = {"workers": args.workers} if args.command == "compare" else {}
        result = RUNNERS[args.command](cfg, **kwargs)
    except (TiltRelayError, OSError, ValueError) as exc:
        code = _exit_code_for(exc)
        report = _error_report(exc, code)
        print(json.dumps(report, indent=2, sort_keys=True), file=sys.stderr)
        if out_dir is not None and args.command != "validate" and not isinstance(exc, ParseError):
            try:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                write_json(Path(out_dir) / "error.json", report)
            except OSError:
                pass
        return code
    if not args.quiet:
        print(json.dumps({"mode": result.mode, "out_dir": str(out_dir), "converged": result.converged,
                          "files": result.files}, indent=2, sort_keys=True))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
