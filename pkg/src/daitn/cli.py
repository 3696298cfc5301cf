"""Command line: validate | plan | run | report.

Exit codes: 0 ok, 1 validation (bad scenario, unknown id or filter),
2 invariant violation during a run, 3 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .network import ValidationError
from .report import UnknownFilter, apply_filter, build_report, dumps, to_csv
from .runner import MODES, Run
from .scenario import ScenarioIOError, bundled, load, validate_file

EXIT_OK, EXIT_VALIDATION, EXIT_INVARIANT, EXIT_IO = 0, 1, 2, 3


def _scenario_path(arg: str) -> Path:
    p = Path(arg)
    if not p.exists() and not p.suffix and bundled(arg).exists():
        return bundled(arg)
    return p


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def cmd_validate(args) -> int:
    errors = validate_file(_scenario_path(args.scenario), args.override)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    print("ok")
    return EXIT_OK


def cmd_plan(args) -> int:
    sc = load(_scenario_path(args.scenario), args.override)
    if args.seed is not None:
        sc.seed = args.seed
    try:
        sc.model(args.model)
    except KeyError:
        print(f"error: no model {args.model!r} in scenario", file=sys.stderr)
        return EXIT_VALIDATION
    mode = args.mode if args.mode != "aats" else None
    out = Run(sc, mode=mode).decide_only(args.model)
    _write(args.out, dumps(out))
    return EXIT_OK


def cmd_run(args) -> int:
    sc = load(_scenario_path(args.scenario), args.override)
    t0 = time.perf_counter()
    run = Run(sc, mode=args.mode, seed=args.seed, t_end=args.t_end).run()
    wall = time.perf_counter() - t0 if args.wall_clock else None
    report = build_report(run, wall)
    if args.format == "csv":
        _write(args.out, to_csv(report))
    else:
        _write(args.out, dumps(report))
        if args.csv:
            _write(args.csv, to_csv(report))
    for v in run.violations:
        print(f"invariant violated: {v}", file=sys.stderr)
    return EXIT_INVARIANT if run.violations else EXIT_OK


def cmd_report(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text())
    except OSError as exc:
        raise ScenarioIOError(f"{args.report}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.report}: not valid JSON ({exc.msg})") from exc
    if args.query is None:
        out = {"scenario": report.get("scenario"), "models": [(m["id"], m["status"]) for m in report["models"]],
               "query_summary": report["query_summary"], "bytes": report["bytes"]}
    else:
        out = apply_filter(report, args.query)
    _write(args.out, dumps(out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="daitn", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("scenario", help="scenario JSON path or bundled name (healthcare, churn)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted path into the scenario; list items by id; JSON-literal value")
        if seed:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("validate", help="schema and cross-reference checks")
    common(p, seed=False)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("plan", help="admission decision and training plan at t=0, no execution")
    common(p)
    p.add_argument("model")
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("run", help="simulate the scenario and write the run report")
    common(p)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None, help="also write the CSV metrics here (json format only)")
    p.add_argument("--wall-clock", action="store_true",
                   help="record elapsed wall-clock time (makes reports differ between runs)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("report", help="filtered view of a saved run report")
    p.add_argument("report")
    p.add_argument("query", nargs="?", default=None, help="timeline[=MODEL] | latency | cp")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except UnknownFilter as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ScenarioIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
