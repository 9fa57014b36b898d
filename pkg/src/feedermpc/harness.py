"""Closed-loop engine and experiment runner.

Drives the plant either open-loop (no control) or under the receding
horizon controller, collects one TraceRow per step, reduces traces to
RunSummary metrics, runs horizon and beta sweeps, and writes the CSV
and SVG artifacts.

A single closed-loop run is strictly sequential because of the state
feedback through the measured transformer temperature; distinct sweep
points share nothing and run concurrently on an executor whose worker
count follows the host CPU count.
"""

from __future__ import annotations

import csv
import dataclasses
import os
import re
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .conic import BACKENDS, OPTIMAL, SolveError, TightnessReport, solve, tightness_report
from .feeder import FeederModel, sensitivity_matrices
from .lindistflow import net_injections, total_flows, voltages
from .mpc import MpcConfig, build_problem, extract_plan, n_variables
from .plant import ControlDecision, ConvergenceError, PlantState, plant_step
from .scenario import Scenario, forecast_slice, generate
from .thermal import ThermalParams, temp_step


@dataclass(frozen=True)
class TraceRow:
    """One closed-loop step: plant truth next to the controller's view.

    Voltages are per node; setpoints and available generation are per
    PV node in ascending node order (``pv_nodes`` carries the labels).
    ``temp_plant`` is the plant temperature after the step and
    ``temp_pred`` the controller's one-step-ahead prediction of it.
    ``solve_time`` stays in memory only; it never reaches the CSV so
    repeated runs serialize identically.
    """

    t: int
    v_plant: np.ndarray
    v_pred: np.ndarray
    p0: float
    q0: float
    p_total_model: float
    q_total_model: float
    temp_plant: float
    temp_pred: float
    pv_nodes: tuple[int, ...]
    p_g: np.ndarray
    p_cr: np.ndarray
    q_g: np.ndarray
    solve_time: float
    solver_status: str
    tight: bool
    theorem_applicable: bool
    clamped: bool
    fallback: bool
    overvoltage: bool
    undervoltage: bool
    overtemp: bool


@dataclass(frozen=True)
class RunSummary:
    """Reduction of a trace to the headline run metrics."""

    total_curtailment_pct: float
    max_temp_c: float
    max_v_pu: float
    min_v_pu: float
    violation_steps: int
    mean_solve_time_s: float
    tightness_rate: float | None
    n_steps: int
    fallback_steps: int


def _summarize(trace: list[TraceRow]) -> RunSummary:
    if not trace:
        return RunSummary(0.0, float("nan"), float("nan"), float("nan"), 0, 0.0, None, 0, 0)
    solved = [r for r in trace if r.solver_status]
    applicable = [r for r in trace if r.theorem_applicable]
    rate = None
    if applicable:
        rate = sum(1 for r in applicable if r.tight) / len(applicable)
    return RunSummary(
        total_curtailment_pct=total_curtailment(trace),
        max_temp_c=max(r.temp_plant for r in trace),
        max_v_pu=max(float(np.max(r.v_plant)) for r in trace),
        min_v_pu=min(float(np.min(r.v_plant)) for r in trace),
        violation_steps=sum(
            1 for r in trace if r.overvoltage or r.undervoltage or r.overtemp
        ),
        mean_solve_time_s=(
            sum(r.solve_time for r in solved) / len(solved) if solved else 0.0
        ),
        tightness_rate=rate,
        n_steps=len(trace),
        fallback_steps=sum(1 for r in trace if r.fallback),
    )


def total_curtailment(trace: list[TraceRow]) -> float:
    """Mean of p_cr/p_g over all (step, PV node) pairs with p_g > 1e-6, x100."""
    ratios: list[float] = []
    for row in trace:
        for k in range(len(row.pv_nodes)):
            if row.p_g[k] > 1e-6:
                ratios.append(float(row.p_cr[k]) / float(row.p_g[k]))
    if not ratios:
        warnings.warn("no (step, node) pair has available generation; curtailment is 0")
        return 0.0
    return 100.0 * float(np.mean(ratios))


def _model_view(
    rmat: np.ndarray,
    xmat: np.ndarray,
    s_base_mva: float,
    thermal: ThermalParams,
    p_g: np.ndarray,
    p_cr: np.ndarray,
    q_g: np.ndarray,
    exogenous,
    temp_from: float,
) -> tuple[np.ndarray, float, float, float]:
    """Linear-model voltages, totals, and one-step temperature for given setpoints."""
    inj = net_injections(p_g, p_cr, exogenous.p_c, q_g, exogenous.q_c)
    v = voltages(rmat, xmat, inj, exogenous.v0)
    p_tot, q_tot = total_flows(inj)
    t_next = temp_step(
        thermal, temp_from, s_base_mva * p_tot, s_base_mva * q_tot, exogenous.t_a
    )
    return v, p_tot, q_tot, t_next


def run_baseline(scenario: Scenario) -> tuple[list[TraceRow], RunSummary]:
    """Run the plant with zero curtailment and zero reactive dispatch.

    The controller columns are filled with the linear model evaluated at
    the same (uncontrolled) setpoints, so the trace exposes the model's
    conservatism against the AC plant.  AC non-convergence re-raises
    with the rows completed so far attached as ``partial_trace``.
    """
    model, thermal = scenario.model, scenario.thermal
    series = generate(scenario.config, model)
    rmat, xmat = sensitivity_matrices(model)
    pv = tuple(model.pv_nodes())
    pv_idx = [node - 1 for node in pv]
    state = PlantState(temperature=scenario.t0)
    model_temp = scenario.t0
    zeros = np.zeros(model.n_nodes)
    trace: list[TraceRow] = []
    for t in range(series.duration):
        ex = series.at(t)
        decision = ControlDecision(p_cr=zeros, q_g=zeros)
        v_pred, p_tot, q_tot, model_temp = _model_view(
            rmat, xmat, model.s_base_mva, thermal, ex.p_g, zeros, zeros, ex, model_temp
        )
        try:
            state, res = plant_step(state, model, thermal, decision, ex)
        except ConvergenceError as exc:
            exc.partial_trace = trace
            raise
        trace.append(
            TraceRow(
                t=t,
                v_plant=res.v,
                v_pred=v_pred,
                p0=res.p0,
                q0=res.q0,
                p_total_model=p_tot,
                q_total_model=q_tot,
                temp_plant=res.t_next,
                temp_pred=model_temp,
                pv_nodes=pv,
                p_g=ex.p_g[pv_idx].copy(),
                p_cr=np.zeros(len(pv)),
                q_g=np.zeros(len(pv)),
                solve_time=0.0,
                solver_status="",
                tight=False,
                theorem_applicable=False,
                clamped=res.clamped,
                fallback=False,
                overvoltage=res.overvoltage,
                undervoltage=res.undervoltage,
                overtemp=res.overtemp,
            )
        )
    return trace, _summarize(trace)


def run_mpc(
    scenario: Scenario,
    cfg: MpcConfig,
    on_report: "Callable[[int, TightnessReport], None] | None" = None,
) -> tuple[list[TraceRow], RunSummary]:
    """Closed loop: solve, dispatch the first step, advance the plant.

    Each solve reads its initial temperature from the plant state, the
    horizon truncates to the remaining steps near the end of the series,
    and a failed solve falls back to full curtailment with zero reactive
    output for that step (flagged).  AC non-convergence re-raises with
    ``partial_trace`` attached.  ``on_report`` receives the step index
    and the tightness report of every successful solve.
    """
    model, thermal = scenario.model, scenario.thermal
    series = generate(scenario.config, model)
    rmat, xmat = sensitivity_matrices(model)
    pv = tuple(model.pv_nodes())
    pv_idx = [node - 1 for node in pv]
    state = PlantState(temperature=scenario.t0)
    trace: list[TraceRow] = []
    for t in range(series.duration):
        ex = series.at(t)
        h_eff = min(cfg.horizon, series.duration - t)
        cfg_t = cfg if h_eff == cfg.horizon else dataclasses.replace(cfg, horizon=h_eff)
        inputs = forecast_slice(series, t, h_eff, state.temperature)
        problem = build_problem(model, thermal, cfg_t, inputs)
        started = time.perf_counter()
        status = "SolveError"
        sol = None
        # the configured backend first, then the others: a stalled
        # interior-point run on one backend is routinely solved by the
        # other, and the full-curtailment fallback is a last resort
        order = [cfg_t.backend] + [b for b in BACKENDS if b != cfg_t.backend]
        for backend in order:
            try:
                attempt = solve(problem, backend=backend,
                                eps_feas=cfg_t.eps_feas, eps_gap=cfg_t.eps_gap)
            except SolveError as exc:
                status = exc.status
                continue
            if sol is None or attempt.status == OPTIMAL:
                sol = attempt
                status = attempt.status
            if attempt.status == OPTIMAL:
                break
        elapsed = time.perf_counter() - started
        if sol is not None and sol.status == OPTIMAL:
            plan = extract_plan(problem, sol)
            report = tightness_report(plan, sol, model, cfg_t)
            if on_report is not None:
                on_report(t, report)
            tight = (
                report.tight_through_h_star
                if report.theorem_applicable
                else bool(np.all(report.tight))
            )
            applicable = report.theorem_applicable
            fallback = False
            decision = ControlDecision(p_cr=plan.p_cr[0].copy(), q_g=plan.q_g[0].copy())
            v_pred = plan.v[0].copy()
            p_tot = float(plan.p_total[0])
            q_tot = float(plan.q_total[0])
            temp_pred = float(plan.t_next[0])
            solve_time = sol.solve_time
        else:
            tight = False
            applicable = False
            fallback = True
            decision = ControlDecision(p_cr=ex.p_g.copy(), q_g=np.zeros(model.n_nodes))
            v_pred, p_tot, q_tot, temp_pred = _model_view(
                rmat, xmat, model.s_base_mva, thermal, ex.p_g, ex.p_g,
                np.zeros(model.n_nodes), ex, state.temperature,
            )
            solve_time = elapsed
        try:
            state, res = plant_step(state, model, thermal, decision, ex)
        except ConvergenceError as exc:
            exc.partial_trace = trace
            raise
        trace.append(
            TraceRow(
                t=t,
                v_plant=res.v,
                v_pred=v_pred,
                p0=res.p0,
                q0=res.q0,
                p_total_model=p_tot,
                q_total_model=q_tot,
                temp_plant=res.t_next,
                temp_pred=temp_pred,
                pv_nodes=pv,
                p_g=ex.p_g[pv_idx].copy(),
                p_cr=res.applied.p_cr[pv_idx].copy(),
                q_g=res.applied.q_g[pv_idx].copy(),
                solve_time=solve_time,
                solver_status=status,
                tight=tight,
                theorem_applicable=applicable,
                clamped=res.clamped,
                fallback=fallback,
                overvoltage=res.overvoltage,
                undervoltage=res.undervoltage,
                overtemp=res.overtemp,
            )
        )
    return trace, _summarize(trace)


def sweep_horizon(
    scenario: Scenario,
    h_list: list[int],
    objective_mode: str = "curtailment_only",
) -> list[dict]:
    """Closed-loop run per horizon; rows ordered like the input list."""

    def point(h: int) -> dict:
        cfg = MpcConfig(horizon=h, objective_mode=objective_mode)
        _, summary = run_mpc(scenario, cfg)
        return {
            "horizon": h,
            "n_variables": n_variables(h, scenario.model.n_nodes),
            "mean_solve_time_s": summary.mean_solve_time_s,
            "total_curtailment_pct": summary.total_curtailment_pct,
        }

    workers = max(1, min(len(h_list), os.cpu_count() or 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(point, h_list))


def sweep_beta(
    scenario: Scenario,
    beta_list: list[float],
    horizon: int = 1,
) -> list[dict]:
    """Closed-loop run per beta with the mixed objective; input order kept."""

    def point(beta: float) -> dict:
        cfg = MpcConfig(horizon=horizon, beta=beta, objective_mode="curtailment_plus_q")
        _, summary = run_mpc(scenario, cfg)
        return {
            "beta": beta,
            "mean_solve_time_s": summary.mean_solve_time_s,
            "total_curtailment_pct": summary.total_curtailment_pct,
        }

    workers = max(1, min(len(beta_list), os.cpu_count() or 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(point, beta_list))


_SCALARS_PRE = ["t"]
_SCALARS_POST = [
    "p0",
    "q0",
    "p_total_model",
    "q_total_model",
    "temp_plant",
    "temp_pred",
]
_STATUS = ["solver_status"]
_FLAGS = [
    "tight",
    "theorem_applicable",
    "clamped",
    "fallback",
    "overvoltage",
    "undervoltage",
    "overtemp",
]


def _columns(n_nodes: int, pv_nodes: tuple[int, ...]) -> list[str]:
    cols = list(_SCALARS_PRE)
    cols += [f"v_plant[{j}]" for j in range(1, n_nodes + 1)]
    cols += [f"v_pred[{j}]" for j in range(1, n_nodes + 1)]
    cols += list(_SCALARS_POST)
    for node in pv_nodes:
        cols += [f"p_g[{node}]", f"p_cr[{node}]", f"q_g[{node}]"]
    return cols + _STATUS + _FLAGS


def write_trace(trace: list[TraceRow], path: str) -> None:
    """Write the trace as CSV: header row, fixed column order, RFC 4180.

    Floats are serialized with repr so parsing restores the exact
    double; an empty trace writes the scalar columns only.  Solve time
    is deliberately not a column: it varies between identical runs.
    """
    if trace:
        cols = _columns(trace[0].v_plant.size, trace[0].pv_nodes)
    else:
        cols = list(_SCALARS_PRE) + list(_SCALARS_POST) + _STATUS + _FLAGS
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in trace:
                rec: list[str] = [str(row.t)]
                rec += [repr(float(x)) for x in row.v_plant]
                rec += [repr(float(x)) for x in row.v_pred]
                rec += [repr(float(getattr(row, name))) for name in _SCALARS_POST]
                for k in range(len(row.pv_nodes)):
                    rec += [
                        repr(float(row.p_g[k])),
                        repr(float(row.p_cr[k])),
                        repr(float(row.q_g[k])),
                    ]
                rec.append(row.solver_status)
                rec += ["true" if getattr(row, name) else "false" for name in _FLAGS]
                writer.writerow(rec)
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_trace(path: str) -> list[TraceRow]:
    """Parse a CSV written by write_trace back into TraceRow records."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
    except OSError as exc:
        raise OSError(f"cannot read trace from {path}: {exc}") from exc
    col = {name: i for i, name in enumerate(header)}
    n_nodes = sum(1 for name in header if name.startswith("v_plant["))
    pv_nodes = tuple(
        int(m.group(1)) for name in header if (m := re.fullmatch(r"p_cr\[(\d+)\]", name))
    )
    trace: list[TraceRow] = []
    for rec in rows:
        kwargs = dict(
            t=int(rec[col["t"]]),
            v_plant=np.array([float(rec[col[f"v_plant[{j}]"]]) for j in range(1, n_nodes + 1)]),
            v_pred=np.array([float(rec[col[f"v_pred[{j}]"]]) for j in range(1, n_nodes + 1)]),
            pv_nodes=pv_nodes,
            p_g=np.array([float(rec[col[f"p_g[{node}]"]]) for node in pv_nodes]),
            p_cr=np.array([float(rec[col[f"p_cr[{node}]"]]) for node in pv_nodes]),
            q_g=np.array([float(rec[col[f"q_g[{node}]"]]) for node in pv_nodes]),
            solve_time=0.0,
            solver_status=rec[col["solver_status"]],
        )
        for name in _SCALARS_POST:
            kwargs[name] = float(rec[col[name]])
        for name in _FLAGS:
            kwargs[name] = rec[col[name]] == "true"
        trace.append(TraceRow(**kwargs))
    return trace


def _svg_figure():
    from matplotlib.backends.backend_svg import FigureCanvasSVG
    from matplotlib.figure import Figure

    fig = Figure(figsize=(8.0, 4.5))
    FigureCanvasSVG(fig)
    return fig


def _save(fig, path: str) -> None:
    try:
        fig.savefig(path, format="svg")
    except OSError as exc:
        raise OSError(f"cannot write plot to {path}: {exc}") from exc


def render_plots(
    trace: list[TraceRow],
    out_dir: str,
    model: FeederModel | None = None,
    thermal: ThermalParams | None = None,
) -> list[str]:
    """Render the five run plots as SVG files and return their paths.

    Bound lines are drawn when the feeder model and thermal parameters
    are supplied.
    """
    os.makedirs(out_dir, exist_ok=True)
    t = np.array([row.t for row in trace])
    paths: list[str] = []

    fig = _svg_figure()
    ax = fig.add_subplot(111)
    if trace:
        v = np.stack([row.v_plant for row in trace])
        for j in range(v.shape[1]):
            ax.plot(t, v[:, j], lw=0.9, label=f"node {j + 1}")
        ax.legend(loc="upper right", fontsize=7, ncol=2)
    if model is not None:
        ax.axhline(model.v_max, color="k", ls="--", lw=0.8)
        ax.axhline(model.v_min, color="k", ls="--", lw=0.8)
    ax.set_xlabel("time step")
    ax.set_ylabel("voltage magnitude (p.u.)")
    ax.set_title("plant voltages")
    path = os.path.join(out_dir, "voltages.svg")
    _save(fig, path)
    paths.append(path)

    fig = _svg_figure()
    ax = fig.add_subplot(111)
    if trace:
        ax.plot(t, [row.temp_plant for row in trace], lw=1.2, label="plant")
        ax.plot(t, [row.temp_pred for row in trace], lw=0.9, ls=":", label="model")
        ax.legend(loc="lower right", fontsize=8)
    if thermal is not None:
        ax.axhline(thermal.t_max, color="k", ls="--", lw=0.8)
    ax.set_xlabel("time step")
    ax.set_ylabel("hot-spot temperature (C)")
    ax.set_title("transformer temperature")
    path = os.path.join(out_dir, "temperature.svg")
    _save(fig, path)
    paths.append(path)

    for name, attr, ylabel in (
        ("curtailment", "p_cr", "curtailed real power (p.u.)"),
        ("reactive", "q_g", "reactive dispatch (p.u.)"),
    ):
        fig = _svg_figure()
        ax = fig.add_subplot(111)
        if trace:
            arr = np.stack([getattr(row, attr) for row in trace])
            for k, node in enumerate(trace[0].pv_nodes):
                ax.plot(t, arr[:, k], lw=1.0, label=f"node {node}")
            ax.legend(loc="upper right", fontsize=8)
        ax.set_xlabel("time step")
        ax.set_ylabel(ylabel)
        ax.set_title(name)
        path = os.path.join(out_dir, f"{name}.svg")
        _save(fig, path)
        paths.append(path)

    fig = _svg_figure()
    ax = fig.add_subplot(111)
    if trace:
        ax.plot(t, [row.p0 for row in trace], lw=1.0, label="P0 (plant)")
        ax.plot(t, [row.q0 for row in trace], lw=1.0, label="Q0 (plant)")
        ax.plot(t, [row.p_total_model for row in trace], lw=0.9, ls=":", label="P (model)")
        ax.plot(t, [row.q_total_model for row in trace], lw=0.9, ls=":", label="Q (model)")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("time step")
    ax.set_ylabel("head flow (p.u.)")
    ax.set_title("substation flows")
    path = os.path.join(out_dir, "head_flow.svg")
    _save(fig, path)
    paths.append(path)
    return paths


def render_horizon_sweep(table: list[dict], path: str) -> None:
    """Plot curtailment and mean solve time against the horizon length."""
    fig = _svg_figure()
    ax = fig.add_subplot(111)
    h = [row["horizon"] for row in table]
    ax.plot(h, [row["total_curtailment_pct"] for row in table], "o-", label="curtailment (%)")
    ax.set_xlabel("horizon (steps)")
    ax.set_ylabel("total curtailment (%)")
    ax2 = ax.twinx()
    ax2.plot(h, [row["mean_solve_time_s"] for row in table], "s--", color="tab:red",
             label="mean solve time (s)")
    ax2.set_ylabel("mean solve time (s)")
    ax.set_title("horizon trade-off")
    _save(fig, path)


def render_beta_sweep(table: list[dict], path: str) -> None:
    """Plot curtailment against the objective weight on a log axis."""
    fig = _svg_figure()
    ax = fig.add_subplot(111)
    ax.semilogx(
        [row["beta"] for row in table],
        [row["total_curtailment_pct"] for row in table],
        "o-",
    )
    ax.set_xlabel("beta")
    ax.set_ylabel("total curtailment (%)")
    ax.set_title("objective weight sweep")
    _save(fig, path)
