"""Command line entry point: ``oneshot simulate|sweep|verify-instances``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import BudgetViolation, ExperimentConfig, emit_results, format_results, run_sweep, run_trials
from .instances import make_packing, verify_kernel_properties, verify_packing_convexity


def _simulate(args) -> int:
    config = ExperimentConfig.load(args.config)
    records = run_trials(config)
    for r in records:
        print(json.dumps({
            "estimator": r.estimator, "m": r.m, "trial": r.trial, "seed": r.seed,
            "error": r.error, "bits_total": r.bits_total, "wall_time": round(r.wall_time, 6),
        }))
    return 0


def _sweep(args) -> int:
    config = ExperimentConfig.load(args.config)
    fmt = args.format or config.format
    out = args.out or config.output
    rows = run_sweep(config)
    if out:
        emit_results(rows, fmt, out)
        print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)
    else:
        sys.stdout.write(format_results(rows, fmt))
    return 0


def _verify(args) -> int:
    reports = []
    for d in args.dims:
        reports.append(verify_kernel_properties(args.samples, args.seed, d))
        packing = make_packing(args.epsilon, args.delta, d, seed=args.seed)
        reports.append(verify_packing_convexity(packing, args.samples, args.seed))

    print(f"{'object':<10}{'d':>3}  {'check':<28}{'observed':>14}{'bound':>14}  result")
    for rep in reports:
        for name, c in rep["checks"].items():
            status = "pass" if c["pass"] else "FAIL"
            print(f"{rep['object']:<10}{rep['d']:>3}  {name:<28}{c['observed']:>14.6g}{c['bound']:>14.6g}  {status}")
    ok = all(rep["pass"] for rep in reports)
    print("all checks passed" if ok else "some checks FAILED")
    if args.json:
        Path(args.json).write_text(json.dumps(reports, indent=2) + "\n")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oneshot", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run every trial and print one JSON record per line")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_simulate)

    p = sub.add_parser("sweep", help="aggregate trials per (estimator, m) and write a result file")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"))
    p.set_defaults(func=_sweep)

    p = sub.add_parser("verify-instances", help="numerically check the bump kernel and packing functions")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--epsilon", type=float, default=0.004)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--json", help="also write the full report as JSON")
    p.set_defaults(func=_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except BudgetViolation as exc:
        print(f"budget violation: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
