"""Exogenous data: random PQ loads, the daily PV availability curve,
ambient temperature and substation voltage, plus the self-contained
scenario file format and perfect-forecast slicing.

Reproducibility contract: series are drawn from numpy's PCG64 generator
seeded with the scenario seed, active loads first (one (T, N) uniform
block), power factors second (one (T, N) uniform block).  The generator
algorithm is part of the file format (format_version 1, rng
"numpy-pcg64"); identical (seed, config) gives a bit-identical series
on any platform.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .feeder import FeederModel, feeder_from_dict, feeder_to_dict
from .mpc import HorizonInputs
from .thermal import ThermalParams

FORMAT_VERSION = 1
RNG_NAME = "numpy-pcg64"


@dataclass(frozen=True)
class PvProfile:
    """Gaussian availability curve: peak_pu * exp(-(t - t_peak)^2 / (2 sigma^2))."""

    peak_pu: float
    t_peak_min: float
    sigma_min: float

    def __post_init__(self) -> None:
        if self.peak_pu < 0:
            raise ValueError(f"PV peak must be >= 0, got {self.peak_pu}")
        if self.sigma_min <= 0:
            raise ValueError(f"PV profile width must be > 0, got {self.sigma_min}")

    def at(self, minutes: np.ndarray) -> np.ndarray:
        return self.peak_pu * np.exp(-((minutes - self.t_peak_min) ** 2) / (2 * self.sigma_min**2))


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 7
    duration: int = 360
    dt_min: float = 1.0
    load_p_min: float = 0.004
    load_p_max: float = 0.012
    pf_min: float = 0.90
    pf_max: float = 0.95
    pv: dict[int, PvProfile] = field(default_factory=dict)
    v0: float | tuple = 1.0
    t_a: float | tuple = 35.0

    def __post_init__(self) -> None:
        if self.duration < 1:
            raise ValueError("duration must be >= 1 step")
        if self.dt_min <= 0:
            raise ValueError("dt must be positive")
        if not (0.0 <= self.load_p_min <= self.load_p_max):
            raise ValueError("load range must satisfy 0 <= min <= max")
        if not (0.0 < self.pf_min <= self.pf_max <= 1.0):
            raise ValueError("power factors must satisfy 0 < min <= max <= 1")


@dataclass(frozen=True)
class ExogenousSeries:
    """Per-step exogenous data, arrays indexed [t] or [t, node-1]."""

    p_c: np.ndarray
    q_c: np.ndarray
    p_g: np.ndarray
    v0: np.ndarray
    t_a: np.ndarray

    def __post_init__(self) -> None:
        t, n = self.p_c.shape
        if self.q_c.shape != (t, n) or self.p_g.shape != (t, n):
            raise ValueError("p_c, q_c, p_g must share shape (T, N)")
        if self.v0.shape != (t,) or self.t_a.shape != (t,):
            raise ValueError("v0 and t_a must have shape (T,)")

    @property
    def duration(self) -> int:
        return self.p_c.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.p_c.shape[1]

    def at(self, t: int) -> "StepExogenous":
        return StepExogenous(
            p_c=self.p_c[t],
            q_c=self.q_c[t],
            p_g=self.p_g[t],
            v0=float(self.v0[t]),
            t_a=float(self.t_a[t]),
        )


@dataclass(frozen=True)
class StepExogenous:
    """One step's slice, consumed by the plant."""

    p_c: np.ndarray
    q_c: np.ndarray
    p_g: np.ndarray
    v0: float
    t_a: float


@dataclass(frozen=True)
class Scenario:
    """One self-contained experiment: feeder, thermal model, initial
    transformer temperature, and the exogenous-data recipe."""

    model: FeederModel
    thermal: ThermalParams
    config: ScenarioConfig
    t0: float = 35.0

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, config=replace(self.config, seed=seed))


def _broadcast(profile, duration: int, name: str) -> np.ndarray:
    arr = np.asarray(profile, dtype=float)
    if arr.ndim == 0:
        return np.full(duration, float(arr))
    if arr.shape != (duration,):
        raise ValueError(f"{name} series must have length {duration}, got {arr.shape}")
    return arr


def generate(cfg: ScenarioConfig, model: FeederModel) -> ExogenousSeries:
    """Draw the load series and evaluate the PV curves, seeded and checked
    against the inverter ratings."""
    n = model.n_nodes
    for node in cfg.pv:
        if node not in model.inverters:
            raise ValueError(f"PV profile at node {node} but no inverter is defined there")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    p_c = rng.uniform(cfg.load_p_min, cfg.load_p_max, size=(cfg.duration, n))
    pf = rng.uniform(cfg.pf_min, cfg.pf_max, size=(cfg.duration, n))
    q_c = p_c * np.tan(np.arccos(pf))
    minutes = np.arange(cfg.duration) * cfg.dt_min
    p_g = np.zeros((cfg.duration, n))
    for node, prof in cfg.pv.items():
        p_g[:, node - 1] = prof.at(minutes)
    s_max = model.s_max_vector()
    over = p_g > s_max[None, :] + 1e-12
    if np.any(over):
        t_bad, j_bad = map(int, np.argwhere(over)[0])
        raise ValueError(
            f"PV availability exceeds inverter rating at t={t_bad}, node {j_bad + 1}: "
            f"{p_g[t_bad, j_bad]:.6g} > {s_max[j_bad]:.6g} p.u."
        )
    return ExogenousSeries(
        p_c=p_c,
        q_c=q_c,
        p_g=p_g,
        v0=_broadcast(cfg.v0, cfg.duration, "v0"),
        t_a=_broadcast(cfg.t_a, cfg.duration, "t_a"),
    )


def forecast_slice(series: ExogenousSeries, t: int, horizon: int, t_meas: float) -> HorizonInputs:
    """Perfect-foresight window [t, t+horizon); the measured temperature
    completes the controller's input bundle."""
    if t < 0 or horizon < 1:
        raise ValueError(f"need t >= 0 and horizon >= 1, got t={t}, horizon={horizon}")
    if t + horizon > series.duration:
        raise ValueError(
            f"window [{t}, {t + horizon}) runs past the series end {series.duration}"
        )
    sl = slice(t, t + horizon)
    return HorizonInputs(
        p_c=series.p_c[sl],
        q_c=series.q_c[sl],
        p_g=series.p_g[sl],
        v0=series.v0[sl],
        t_a=series.t_a[sl],
        t_meas=t_meas,
    )


def default_scenario() -> Scenario:
    """The calibrated six-node study case.

    Uniform lines, small lagging loads, one large PV plant at the feeder
    end sized so the uncontrolled run violates both the voltage band and
    the transformer temperature limit.  Line impedances put the voltage
    limit in play at the curtailed midday operating point, so reactive
    support and curtailment stay in genuine competition across the
    objective-weight range.
    """
    from .feeder import InverterSpec, LineSegment

    model = FeederModel(
        lines=tuple(LineSegment(r=0.015, x=0.01125) for _ in range(6)),
        inverters={6: InverterSpec(s_max=1.6)},
        s_base_mva=2.5,
        v_base_kv=4.8,
        v_min=0.95,
        v_max=1.05,
    )
    config = ScenarioConfig(
        seed=7,
        duration=360,
        dt_min=1.0,
        load_p_min=0.004,
        load_p_max=0.012,
        pf_min=0.90,
        pf_max=0.95,
        pv={6: PvProfile(peak_pu=1.5, t_peak_min=180.0, sigma_min=120.0)},
        v0=1.0,
        t_a=35.0,
    )
    return Scenario(model=model, thermal=ThermalParams(), config=config, t0=35.0)


def scenario_to_dict(sc: Scenario) -> dict:
    cfg = sc.config
    doc = {
        "format_version": FORMAT_VERSION,
        "rng": RNG_NAME,
        "feeder": feeder_to_dict(sc.model),
        "thermal": {
            "a": sc.thermal.a,
            "b": sc.thermal.b,
            "c": sc.thermal.c,
            "d": sc.thermal.d,
            "t_max": sc.thermal.t_max,
            "t0": sc.t0,
        },
        "scenario": {
            "seed": cfg.seed,
            "duration": cfg.duration,
            "dt_min": cfg.dt_min,
            "load_p_min": cfg.load_p_min,
            "load_p_max": cfg.load_p_max,
            "pf_min": cfg.pf_min,
            "pf_max": cfg.pf_max,
            "pv": {
                str(node): {
                    "peak_pu": prof.peak_pu,
                    "t_peak_min": prof.t_peak_min,
                    "sigma_min": prof.sigma_min,
                }
                for node, prof in sorted(cfg.pv.items())
            },
            "v0": cfg.v0 if np.isscalar(cfg.v0) else list(cfg.v0),
            "t_a": cfg.t_a if np.isscalar(cfg.t_a) else list(cfg.t_a),
        },
    }
    return doc


def scenario_from_dict(doc: dict) -> Scenario:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported scenario format_version {version!r}")
    if doc.get("rng", RNG_NAME) != RNG_NAME:
        raise ValueError(f"unsupported rng {doc.get('rng')!r}; this build uses {RNG_NAME}")
    model = feeder_from_dict(doc["feeder"])
    th = doc["thermal"]
    thermal = ThermalParams(a=th["a"], b=th["b"], c=th["c"], d=th["d"], t_max=th["t_max"])
    sc = doc["scenario"]
    pv = {
        int(node): PvProfile(
            peak_pu=p["peak_pu"], t_peak_min=p["t_peak_min"], sigma_min=p["sigma_min"]
        )
        for node, p in sc.get("pv", {}).items()
    }
    config = ScenarioConfig(
        seed=int(sc["seed"]),
        duration=int(sc["duration"]),
        dt_min=float(sc.get("dt_min", 1.0)),
        load_p_min=float(sc["load_p_min"]),
        load_p_max=float(sc["load_p_max"]),
        pf_min=float(sc["pf_min"]),
        pf_max=float(sc["pf_max"]),
        pv=pv,
        v0=sc.get("v0", 1.0) if np.isscalar(sc.get("v0", 1.0)) else tuple(sc["v0"]),
        t_a=sc.get("t_a", 35.0) if np.isscalar(sc.get("t_a", 35.0)) else tuple(sc["t_a"]),
    )
    return Scenario(model=model, thermal=thermal, config=config, t0=float(th.get("t0", 35.0)))


def save_scenario(sc: Scenario, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=1)
        fh.write("\n")


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def load_series_csv(node_csv: str, global_csv: str, n_nodes: int) -> ExogenousSeries:
    """Import a series from two CSVs instead of generating one.

    ``node_csv`` columns: t,node,p_c,q_c,p_g (one row per step per node,
    1-based nodes); ``global_csv`` columns: t,v0,T_a.  Steps must be
    contiguous from 0 and complete.
    """
    per_node: dict[tuple[int, int], tuple[float, float, float]] = {}
    with open(node_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["t"]), int(row["node"]))
            per_node[key] = (float(row["p_c"]), float(row["q_c"]), float(row["p_g"]))
    glob: dict[int, tuple[float, float]] = {}
    with open(global_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            glob[int(row["t"])] = (float(row["v0"]), float(row["T_a"]))
    if not glob:
        raise ValueError(f"{global_csv} holds no rows")
    duration = max(glob) + 1
    if sorted(glob) != list(range(duration)):
        raise ValueError("global series steps must be contiguous from 0")
    p_c = np.zeros((duration, n_nodes))
    q_c = np.zeros((duration, n_nodes))
    p_g = np.zeros((duration, n_nodes))
    for t in range(duration):
        for node in range(1, n_nodes + 1):
            if (t, node) not in per_node:
                raise ValueError(f"missing node-series row for t={t}, node={node}")
            p_c[t, node - 1], q_c[t, node - 1], p_g[t, node - 1] = per_node[(t, node)]
    v0 = np.array([glob[t][0] for t in range(duration)])
    t_a = np.array([glob[t][1] for t in range(duration)])
    return ExogenousSeries(p_c=p_c, q_c=q_c, p_g=p_g, v0=v0, t_a=t_a)
