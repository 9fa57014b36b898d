"""Receding-horizon voltage and transformer-temperature control for
PV-heavy radial distribution feeders.

The package splits into the feeder and thermal models, the linearized
power-flow map used inside the controller, the conic program and its
KKT / tightness diagnostics, an exact AC plant for closed-loop truth,
scenario generation, and the experiment harness.
"""

from .conic import (
    BACKENDS,
    ConicProblem,
    ConicSolution,
    DualRecursionResult,
    KktReport,
    SocSlice,
    SolveError,
    TightnessReport,
    disable_kkt_audit,
    dual_recursion_check,
    enable_kkt_audit,
    kkt_audit_reports,
    kkt_residuals,
    solve,
    tightness_report,
)
from .feeder import (
    FeederModel,
    InverterSpec,
    LineSegment,
    feeder_from_dict,
    feeder_from_json,
    feeder_to_dict,
    reduced_incidence,
    sensitivity_matrices,
)
from .harness import (
    RunSummary,
    TraceRow,
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
from .lindistflow import InjectionState, branch_flows, net_injections, total_flows, voltages
from .mpc import (
    OBJECTIVE_MODES,
    ControlPlan,
    HorizonInputs,
    MpcConfig,
    build_problem,
    extract_plan,
    n_variables,
)
from .plant import (
    AcSolution,
    ControlDecision,
    ConvergenceError,
    PlantState,
    PlantStepResult,
    ac_power_flow,
    clamp_decision,
    plant_step,
)
from .scenario import (
    ExogenousSeries,
    PvProfile,
    Scenario,
    ScenarioConfig,
    StepExogenous,
    default_scenario,
    forecast_slice,
    generate,
    load_scenario,
    load_series_csv,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from .thermal import ThermalParams, simulate_temperature, steady_state_flow, temp_step

__version__ = "0.1.0"

__all__ = [
    "AcSolution",
    "BACKENDS",
    "ConicProblem",
    "ConicSolution",
    "ControlDecision",
    "ControlPlan",
    "ConvergenceError",
    "DualRecursionResult",
    "ExogenousSeries",
    "FeederModel",
    "HorizonInputs",
    "InjectionState",
    "InverterSpec",
    "KktReport",
    "LineSegment",
    "MpcConfig",
    "OBJECTIVE_MODES",
    "PlantState",
    "PlantStepResult",
    "PvProfile",
    "RunSummary",
    "Scenario",
    "ScenarioConfig",
    "SocSlice",
    "SolveError",
    "StepExogenous",
    "ThermalParams",
    "TightnessReport",
    "TraceRow",
    "ac_power_flow",
    "branch_flows",
    "build_problem",
    "clamp_decision",
    "default_scenario",
    "disable_kkt_audit",
    "dual_recursion_check",
    "enable_kkt_audit",
    "extract_plan",
    "feeder_from_dict",
    "feeder_from_json",
    "feeder_to_dict",
    "forecast_slice",
    "generate",
    "kkt_audit_reports",
    "kkt_residuals",
    "load_scenario",
    "load_series_csv",
    "n_variables",
    "net_injections",
    "plant_step",
    "read_trace",
    "reduced_incidence",
    "render_beta_sweep",
    "render_horizon_sweep",
    "render_plots",
    "run_baseline",
    "run_mpc",
    "save_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "sensitivity_matrices",
    "simulate_temperature",
    "solve",
    "steady_state_flow",
    "sweep_beta",
    "sweep_horizon",
    "temp_step",
    "tightness_report",
    "total_curtailment",
    "write_trace",
]
