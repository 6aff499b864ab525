"""Command line entry point: ``dtalloc {solve,sweep,check-bound,validate} <config>``.

``<config>`` is a TOML scenario file or a preset name (``edp50``,
``edp5-cycle``, ``quantized100``).  ``--set section.key=value`` overrides any
scalar.  Exit codes: 0 success, 2 invalid config, 3 diverged run.
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import apply_overrides, load_config
from .errors import ConfigParseError, ConfigValidationError, DtallocError
from .scenarios import build_scenario, run_scenario, run_sweep

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dtalloc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb, text in (
        ("solve", "run one scenario and write trace.csv / report.json"),
        ("sweep", "run the [sweep] grid x seeds and write sweep.csv / sweep_summary.csv"),
        ("check-bound", "print the step-size bound report only"),
        ("validate", "check the config and exit"),
    ):
        p = sub.add_parser(verb, help=text)
        p.add_argument("config", help="scenario TOML file or preset name")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE")
        if verb in ("solve", "sweep"):
            p.add_argument("--out", default=None, help="output directory (overrides [output].dir)")
        if verb == "sweep":
            p.add_argument("--workers", type=int, default=None, help="process count (default: $DTALLOC_WORKERS or 1)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.overrides:
            cfg = apply_overrides(cfg, args.overrides)
    except ConfigValidationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_INVALID
    except ConfigParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    print(f"config {cfg.source} seed={cfg.seed} hash={cfg.hash()[:16]}", file=sys.stderr)
    try:
        return _dispatch(args, cfg)
    except DtallocError as exc:
        # problems that only show once the scenario is built, e.g. an undefined step bound
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def _dispatch(args, cfg) -> int:
    if args.verb == "validate":
        print("ok")
        return EXIT_OK
    if args.verb == "check-bound":
        scn = build_scenario(cfg)
        out = {
            "step_T": scn.protocol.step_T,
            "step_bound": None if scn.bound is None else scn.bound.as_dict(),
            "note": scn.bound_note,
        }
        print(json.dumps(out, indent=2, sort_keys=True))
        return EXIT_OK
    if args.verb == "sweep":
        if not cfg.has_sweep:
            print("error: config has no [sweep] section", file=sys.stderr)
            return EXIT_INVALID
        rows, summary = run_sweep(cfg, args.out, args.workers)
        for cell in summary:
            print(json.dumps(cell, sort_keys=True))
        return EXIT_OK
    _, report = run_scenario(cfg, args.out)
    print(report.to_json())
    return EXIT_DIVERGED if report.status == "Diverged" else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
