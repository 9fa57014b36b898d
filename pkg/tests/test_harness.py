"""Closed-loop harness: metrics, trace serialization, runs, sweeps, plots."""

import os

import numpy as np
import pytest

from feedermpc import (
    FeederModel,
    InverterSpec,
    LineSegment,
    MpcConfig,
    PvProfile,
    Scenario,
    ScenarioConfig,
    ThermalParams,
    TraceRow,
    n_variables,
    read_trace,
    render_beta_sweep,
    render_horizon_sweep,
    render_plots,
    run_baseline,
    run_mpc,
    sweep_beta,
    sweep_horizon,
    total_curtailment,
    write_trace,
)


def _row(t: int = 0, p_g=(1.0,), p_cr=(0.0,), **over) -> TraceRow:
    base = dict(
        t=t,
        v_plant=np.array([1.0, 1.01]),
        v_pred=np.array([1.0, 1.01]),
        p0=0.1,
        q0=0.02,
        p_total_model=0.1,
        q_total_model=0.02,
        temp_plant=40.0,
        temp_pred=40.1,
        pv_nodes=(2,),
        p_g=np.asarray(p_g, dtype=float),
        p_cr=np.asarray(p_cr, dtype=float),
        q_g=np.zeros(len(p_g)),
        solve_time=0.01,
        solver_status="Optimal",
        tight=True,
        theorem_applicable=True,
        clamped=False,
        fallback=False,
        overvoltage=False,
        undervoltage=False,
        overtemp=False,
    )
    base.update(over)
    return TraceRow(**base)


def _mild_scenario(duration: int = 10) -> Scenario:
    model = FeederModel(
        lines=(LineSegment(r=0.005, x=0.00375),) * 2,
        inverters={2: InverterSpec(s_max=1.2)},
    )
    config = ScenarioConfig(
        seed=5,
        duration=duration,
        load_p_min=0.004,
        load_p_max=0.008,
        pv={2: PvProfile(peak_pu=0.3, t_peak_min=duration / 2, sigma_min=duration)},
        v0=1.0,
    )
    return Scenario(model=model, thermal=ThermalParams(), config=config, t0=35.0)


def test_total_curtailment_trivial_cases():
    assert total_curtailment([_row(t, p_cr=(0.0,)) for t in range(4)]) == 0.0
    assert total_curtailment([_row(t, p_cr=(1.0,)) for t in range(4)]) == pytest.approx(100.0)
    half = [_row(t, p_g=(0.8,), p_cr=(0.4,)) for t in range(4)]
    assert total_curtailment(half) == pytest.approx(50.0)


def test_total_curtailment_is_mean_of_ratios():
    # one fully curtailed low-sun step and one untouched high-sun step
    trace = [_row(0, p_g=(0.2,), p_cr=(0.2,)), _row(1, p_g=(1.0,), p_cr=(0.0,))]
    assert total_curtailment(trace) == pytest.approx(50.0)
    # concatenation pools the (step, node) ratios
    a = [_row(t, p_g=(1.0,), p_cr=(1.0,)) for t in range(3)]
    b = [_row(t, p_g=(1.0,), p_cr=(0.0,)) for t in range(1)]
    assert total_curtailment(a + b) == pytest.approx(75.0)
    # steps below the availability floor are excluded
    with_dark = a + [_row(9, p_g=(1e-9,), p_cr=(0.0,))]
    assert total_curtailment(with_dark) == pytest.approx(100.0)


def test_total_curtailment_warns_without_generation():
    trace = [_row(t, p_g=(0.0,)) for t in range(3)]
    with pytest.warns(UserWarning):
        assert total_curtailment(trace) == 0.0


def test_trace_round_trip(tmp_path):
    trace = [
        _row(t, p_g=(0.3 + 0.01 * t,), p_cr=(0.1 * t,), q_g=np.array([-0.05 * t]))
        for t in range(5)
    ]
    path = str(tmp_path / "trace.csv")
    write_trace(trace, path)
    back = read_trace(path)
    assert len(back) == len(trace)
    for orig, rec in zip(trace, back):
        assert rec.t == orig.t and rec.pv_nodes == orig.pv_nodes
        np.testing.assert_array_equal(rec.v_plant, orig.v_plant)
        np.testing.assert_array_equal(rec.p_cr, orig.p_cr)
        np.testing.assert_array_equal(rec.q_g, orig.q_g)
        assert rec.temp_plant == orig.temp_plant
        assert rec.solver_status == orig.solver_status
        assert rec.tight is orig.tight and rec.fallback is orig.fallback


def test_empty_trace_writes_header_only(tmp_path):
    path = str(tmp_path / "empty.csv")
    write_trace([], path)
    lines = open(path).read().splitlines()
    assert len(lines) == 1 and lines[0].startswith("t,")
    assert read_trace(path) == []


def test_baseline_without_pv_stays_at_or_below_source_voltage():
    sc = _mild_scenario()
    sc = Scenario(
        model=FeederModel(lines=sc.model.lines),
        thermal=sc.thermal,
        config=ScenarioConfig(seed=5, duration=10, v0=1.0),
        t0=35.0,
    )
    trace, summary = run_baseline(sc)
    assert summary.n_steps == 10
    # pure loads only pull voltage down from the source
    assert summary.max_v_pu <= 1.0 + 1e-9
    assert all(row.solver_status == "" for row in trace)
    with pytest.warns(UserWarning):
        assert total_curtailment(trace) == 0.0


def test_run_mpc_idle_when_nothing_binds():
    sc = _mild_scenario()
    trace, summary = run_mpc(sc, MpcConfig(horizon=1))
    assert summary.n_steps == 10
    assert summary.violation_steps == 0 and summary.fallback_steps == 0
    assert summary.total_curtailment_pct == pytest.approx(0.0, abs=1e-3)
    for row in trace:
        assert row.solver_status == "Optimal"
        np.testing.assert_allclose(row.q_g, 0.0, atol=1e-3)


def test_run_mpc_is_deterministic():
    sc = _mild_scenario(duration=6)
    first, _ = run_mpc(sc, MpcConfig(horizon=2))
    second, _ = run_mpc(sc, MpcConfig(horizon=2))
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.v_plant, b.v_plant)
        np.testing.assert_array_equal(a.p_cr, b.p_cr)
        np.testing.assert_array_equal(a.q_g, b.q_g)
        assert a.temp_plant == b.temp_plant


def test_run_mpc_report_callback_fires_every_step():
    sc = _mild_scenario(duration=6)
    seen: list[int] = []
    run_mpc(sc, MpcConfig(horizon=1), on_report=lambda t, rep: seen.append(t))
    assert seen == list(range(6))


def test_sweeps_report_expected_columns():
    sc = _mild_scenario(duration=6)
    htable = sweep_horizon(sc, [1, 2])
    assert [row["horizon"] for row in htable] == [1, 2]
    n = sc.model.n_nodes
    assert [row["n_variables"] for row in htable] == [n_variables(1, n), n_variables(2, n)]
    btable = sweep_beta(sc, [1.0, 100.0])
    assert [row["beta"] for row in btable] == [1.0, 100.0]
    for row in htable + btable:
        assert row["total_curtailment_pct"] >= 0.0
        assert row["mean_solve_time_s"] > 0.0


def test_render_plots_and_sweep_figures(tmp_path):
    sc = _mild_scenario(duration=6)
    trace, _ = run_mpc(sc, MpcConfig(horizon=1))
    out = str(tmp_path / "plots")
    paths = render_plots(trace, out, model=sc.model, thermal=sc.thermal)
    assert len(paths) == 5
    for p in paths:
        assert p.endswith(".svg") and os.path.getsize(p) > 0
    hpath = str(tmp_path / "h.svg")
    bpath = str(tmp_path / "b.svg")
    render_horizon_sweep(sweep_horizon(sc, [1, 2]), hpath)
    render_beta_sweep(sweep_beta(sc, [1.0, 10.0]), bpath)
    assert os.path.getsize(hpath) > 0 and os.path.getsize(bpath) > 0
