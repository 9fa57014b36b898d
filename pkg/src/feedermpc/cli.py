"""Command-line front end: experiment runners over a scenario file.

Subcommands mirror the harness entry points (baseline, run, the two
sweeps, and a per-solve tightness audit).  Every subcommand reads one
self-contained scenario JSON file and writes its artifacts under
``--out``.  Exit status: 0 on success, 2 when ``run`` detects plant
constraint violations, 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from typing import Sequence

import numpy as np

from .conic import SolveError, TightnessReport
from .harness import (
    render_beta_sweep,
    render_horizon_sweep,
    render_plots,
    run_baseline,
    run_mpc,
    sweep_beta,
    sweep_horizon,
    write_trace,
)
from .mpc import OBJECTIVE_MODES, MpcConfig
from .plant import ConvergenceError
from .scenario import Scenario, load_scenario


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for violation
    # detection, so argument errors are remapped to the error status
    def error(self, message: str):  # noqa: D401 - argparse contract
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario JSON file")
    common.add_argument("--out", default=".", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, default=None, metavar="N",
                        help="override the scenario seed")
    common.add_argument("--plots", action="store_true", help="render SVG plots")

    parser = _Parser(prog="feedermpc",
                     description="receding-horizon feeder control experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("baseline", parents=[common],
                       help="uncontrolled run: no curtailment, no reactive dispatch")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("run", parents=[common], help="closed-loop controlled run")
    p.add_argument("--beta", type=float, default=1e5, metavar="F",
                   help="curtailment weight in the mixed objective")
    p.add_argument("--horizon", type=int, default=1, metavar="N",
                   help="prediction horizon in steps")
    p.add_argument("--objective", choices=OBJECTIVE_MODES, default="curtailment_plus_q")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep-horizon", parents=[common],
                       help="curtailment-only runs over a list of horizons")
    p.add_argument("--values", required=True, metavar="H1,H2,...",
                   help="comma-separated horizon lengths")
    p.set_defaults(func=_cmd_sweep_horizon)

    p = sub.add_parser("sweep-beta", parents=[common],
                       help="mixed-objective runs over a list of weights")
    p.add_argument("--values", required=True, metavar="B1,B2,...",
                   help="comma-separated beta values")
    p.set_defaults(func=_cmd_sweep_beta)

    p = sub.add_parser("check-tightness", parents=[common],
                       help="closed-loop run printing one tightness report per solve")
    p.add_argument("--beta", type=float, default=1e5, metavar="F")
    p.add_argument("--horizon", type=int, default=1, metavar="N")
    p.add_argument("--objective", choices=OBJECTIVE_MODES, default="curtailment_plus_q")
    p.set_defaults(func=_cmd_check_tightness)
    return parser


def _load(args: argparse.Namespace) -> Scenario:
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    return sc


def _write_summary(summary, out_dir: str) -> str:
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _print_summary(summary) -> None:
    print(f"steps:             {summary.n_steps}")
    print(f"total curtailment: {summary.total_curtailment_pct:.3f} %")
    print(f"max temperature:   {summary.max_temp_c:.3f} C")
    print(f"voltage range:     [{summary.min_v_pu:.4f}, {summary.max_v_pu:.4f}] p.u.")
    print(f"violation steps:   {summary.violation_steps}")
    print(f"fallback steps:    {summary.fallback_steps}")
    print(f"mean solve time:   {1e3 * summary.mean_solve_time_s:.1f} ms")
    rate = summary.tightness_rate
    print(f"tightness rate:    {'n/a' if rate is None else f'{rate:.4f}'}")


def _emit_run(trace, summary, sc: Scenario, args: argparse.Namespace) -> None:
    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "trace.csv")
    write_trace(trace, trace_path)
    summary_path = _write_summary(summary, args.out)
    _print_summary(summary)
    written = [trace_path, summary_path]
    if args.plots:
        written += render_plots(trace, args.out, sc.model, sc.thermal)
    print("wrote:", ", ".join(written))


def _write_table(table: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(table[0].keys()))
        writer.writeheader()
        writer.writerows(table)


def _cmd_baseline(args: argparse.Namespace) -> int:
    sc = _load(args)
    trace, summary = run_baseline(sc)
    _emit_run(trace, summary, sc, args)
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    sc = _load(args)
    cfg = MpcConfig(horizon=args.horizon, beta=args.beta, objective_mode=args.objective)
    trace, summary = run_mpc(sc, cfg)
    _emit_run(trace, summary, sc, args)
    if summary.violation_steps:
        print(f"constraint violations detected in {summary.violation_steps} steps",
              file=sys.stderr)
        return 2
    return 0


def _cmd_sweep_horizon(args: argparse.Namespace) -> int:
    sc = _load(args)
    values = [int(v) for v in args.values.split(",") if v.strip()]
    table = sweep_horizon(sc, values)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "horizon_sweep.csv")
    _write_table(table, path)
    for row in table:
        print(f"H={row['horizon']:<4d} vars={row['n_variables']:<6d} "
              f"solve={1e3 * row['mean_solve_time_s']:.1f} ms  "
              f"curtailment={row['total_curtailment_pct']:.3f} %")
    written = [path]
    if args.plots:
        plot = os.path.join(args.out, "horizon_sweep.svg")
        render_horizon_sweep(table, plot)
        written.append(plot)
    print("wrote:", ", ".join(written))
    return 0


def _cmd_sweep_beta(args: argparse.Namespace) -> int:
    sc = _load(args)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    table = sweep_beta(sc, values)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "beta_sweep.csv")
    _write_table(table, path)
    for row in table:
        print(f"beta={row['beta']:<10.4g} solve={1e3 * row['mean_solve_time_s']:.1f} ms  "
              f"curtailment={row['total_curtailment_pct']:.3f} %")
    written = [path]
    if args.plots:
        plot = os.path.join(args.out, "beta_sweep.svg")
        render_beta_sweep(table, plot)
        written.append(plot)
    print("wrote:", ", ".join(written))
    return 0


def _format_report(t: int, report: TightnessReport) -> str:
    worst = float(np.max(report.rho, initial=0.0))
    h_star = "-" if report.h_star is None else str(report.h_star)
    flag = "n/a"
    if report.theorem_applicable:
        flag = "tight" if report.tight_through_h_star else "NOT TIGHT"
    line = (f"t={t:<4d} applicable={str(report.theorem_applicable):<5s} "
            f"h*={h_star:<4s} {flag:<9s} max_rho={worst:.3e} MVA^2")
    if report.reason:
        line += f"  ({report.reason})"
    return line


def _cmd_check_tightness(args: argparse.Namespace) -> int:
    sc = _load(args)
    cfg = MpcConfig(horizon=args.horizon, beta=args.beta, objective_mode=args.objective)
    counts = {"applicable": 0, "tight": 0}

    def report_line(t: int, report: TightnessReport) -> None:
        if report.theorem_applicable:
            counts["applicable"] += 1
            counts["tight"] += int(report.tight_through_h_star)
        print(_format_report(t, report))

    _, summary = run_mpc(sc, cfg, on_report=report_line)
    print(f"applicable solves: {counts['applicable']}, "
          f"tight through h*: {counts['tight']}, "
          f"fallback steps: {summary.fallback_steps}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, SolveError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
