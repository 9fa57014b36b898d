"""Command-line interface: exit codes, artifacts, and printed reports."""

import json
import os
import warnings

import pytest

from feedermpc import (
    FeederModel,
    InverterSpec,
    LineSegment,
    PvProfile,
    Scenario,
    ScenarioConfig,
    ThermalParams,
    read_trace,
    save_scenario,
)
from feedermpc.cli import main


@pytest.fixture(scope="module")
def scenario_path(tmp_path_factory) -> str:
    model = FeederModel(
        lines=(LineSegment(r=0.005, x=0.00375),) * 2,
        inverters={2: InverterSpec(s_max=1.2)},
    )
    config = ScenarioConfig(
        seed=5,
        duration=8,
        load_p_min=0.004,
        load_p_max=0.008,
        pv={2: PvProfile(peak_pu=0.3, t_peak_min=4.0, sigma_min=8.0)},
        v0=1.0,
    )
    sc = Scenario(model=model, thermal=ThermalParams(), config=config, t0=35.0)
    path = str(tmp_path_factory.mktemp("cli") / "case.json")
    save_scenario(sc, path)
    return path


def test_baseline_writes_artifacts(scenario_path, tmp_path, capsys):
    out = str(tmp_path / "base")
    assert main(["baseline", scenario_path, "--out", out]) == 0
    trace = read_trace(os.path.join(out, "trace.csv"))
    assert len(trace) == 8 and all(r.solver_status == "" for r in trace)
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["n_steps"] == 8 and summary["tightness_rate"] is None
    assert "total curtailment" in capsys.readouterr().out


def test_run_writes_artifacts_and_plots(scenario_path, tmp_path, capsys):
    out = str(tmp_path / "run")
    code = main(["run", scenario_path, "--out", out, "--horizon", "2", "--plots"])
    assert code == 0
    trace = read_trace(os.path.join(out, "trace.csv"))
    assert len(trace) == 8 and all(r.solver_status == "Optimal" for r in trace)
    svgs = [f for f in os.listdir(out) if f.endswith(".svg")]
    assert len(svgs) == 5
    assert "violation steps:   0" in capsys.readouterr().out


def test_run_reports_violations_with_exit_2(tmp_path, capsys):
    # start above the temperature limit: every solve is infeasible, the
    # fallback curtails fully, and the plant still logs overtemp steps
    model = FeederModel(
        lines=(LineSegment(r=0.005, x=0.00375),),
        inverters={1: InverterSpec(s_max=1.2)},
    )
    config = ScenarioConfig(
        seed=5, duration=3, load_p_min=0.004, load_p_max=0.008, v0=1.0,
        pv={1: PvProfile(peak_pu=0.3, t_peak_min=1.0, sigma_min=5.0)},
    )
    sc = Scenario(model=model, thermal=ThermalParams(), config=config, t0=58.0)
    path = str(tmp_path / "hot.json")
    save_scenario(sc, path)
    out = str(tmp_path / "hot_out")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        code = main(["run", path, "--out", out])
    assert code == 2
    captured = capsys.readouterr()
    assert "constraint violations detected" in captured.err
    trace = read_trace(os.path.join(out, "trace.csv"))
    assert all(r.fallback for r in trace)
    assert any(r.overtemp for r in trace)


def test_sweep_commands_write_tables(scenario_path, tmp_path):
    out = str(tmp_path / "sweeps")
    assert main(["sweep-horizon", scenario_path, "--out", out, "--values", "1,2"]) == 0
    rows = list(open(os.path.join(out, "horizon_sweep.csv")))
    assert rows[0].startswith("horizon,") and len(rows) == 3
    assert main(["sweep-beta", scenario_path, "--out", out, "--values", "1,100",
                 "--plots"]) == 0
    assert os.path.exists(os.path.join(out, "beta_sweep.csv"))
    assert os.path.getsize(os.path.join(out, "beta_sweep.svg")) > 0


def test_check_tightness_prints_per_solve_lines(scenario_path, capsys):
    assert main(["check-tightness", scenario_path, "--horizon", "1"]) == 0
    out = capsys.readouterr().out
    lines = [ln for ln in out.splitlines() if ln.startswith("t=")]
    assert len(lines) == 8
    assert all("max_rho=" in ln for ln in lines)
    assert "applicable solves:" in out


def test_seed_override_changes_the_run(scenario_path, tmp_path):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    assert main(["baseline", scenario_path, "--out", out_a]) == 0
    assert main(["baseline", scenario_path, "--out", out_b, "--seed", "11"]) == 0
    a = open(os.path.join(out_a, "trace.csv")).read()
    b = open(os.path.join(out_b, "trace.csv")).read()
    assert a != b


def test_error_paths_exit_1(tmp_path, capsys):
    assert main(["baseline", str(tmp_path / "missing.json")]) == 1
    assert "error:" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{\"format_version\": 99}")
    assert main(["baseline", str(bad)]) == 1
    with pytest.raises(SystemExit) as exc_info:
        main(["bogus-command"])
    assert exc_info.value.code == 1
