"""Command line entry point.

Exit codes: 0 success, 1 invalid scenario or arguments, 2 a pipeline stage
failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .scenario import (ScenarioError, StageError, export_loops, export_matrix, load_scenario, run, sweep,
                       validate)

log = logging.getLogger("iobnt_aoi")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def _values(text: str) -> list[float]:
    items = [v.strip() for v in text.split(",") if v.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty sweep grid")
    try:
        return [float(v) for v in items]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"non-numeric sweep value: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iobnt-aoi", description="Peak age of information for in-body nanosensors.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log stage progress to stderr")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True, type=Path, help="scenario INI file")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        if out:
            p.add_argument("--out", required=True, type=Path, help="output directory")

    common(sub.add_parser("validate", help="check a scenario file and print diagnostics"), out=False)
    common(sub.add_parser("run", help="evaluate one scenario"))
    p = sub.add_parser("sweep", help="evaluate a scenario over a parameter grid")
    common(p)
    p.add_argument("--param", default=None, help="section.key to vary (default from [sweep])")
    p.add_argument("--values", type=_values, default=None, help="comma separated grid (default from [sweep])")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    common(sub.add_parser("export-matrix", help="write the transition matrix and stationary vector"))
    common(sub.add_parser("export-loops", help="write the circulation loop table"))
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)

    if args.verb == "validate":
        diags = validate(args.config)
        for d in diags:
            print(f"error {d}")
        print(f"{len(diags)} error{'s' if len(diags) != 1 else ''} in {args.config.name}")
        return EXIT_INVALID if diags else EXIT_OK

    try:
        sc = load_scenario(args.config, seed=args.seed)
        if args.verb == "sweep" and args.jobs < 1:
            raise ScenarioError("--jobs must be at least 1")
        log.info("scenario %s loaded", sc.name)
        if args.verb == "run":
            paths = run(sc, args.out)
        elif args.verb == "sweep":
            paths = sweep(sc, args.out, args.param, args.values, args.jobs)
        elif args.verb == "export-matrix":
            paths = export_matrix(sc, args.out)
        else:
            paths = export_loops(sc, args.out)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except Exception as exc:  # anything else is a pipeline failure, not a usage error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    summary = args.out / "summary.txt"
    if summary in paths:
        sys.stdout.write(summary.read_text())
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
