"""Controller problem: build the relaxed convex program for one horizon
and read the control plan back out of a solution.

Per step h the decision variables are p(h), q(h), v(h), p_cr(h), q_g(h)
(N each), T(h+1), P_total(h), Q_total(h), and the auxiliary e(h), i.e.
5N+4 variables.  The exact quadratic temperature coupling is never sent
to the solver; it is replaced by the linear dynamics in e plus the
second-order-cone relaxation e >= s_base^2 (P_total^2 + Q_total^2),
and tightness is checked afterwards (see :mod:`feedermpc.conic`).

The stored objective carries a small uniform pre-scale so solver
tolerances act on a small objective and on small duals; the scaling is
undone when the plan's objective value is reported.  Every KKT identity
is homogeneous in the duals, so the scaling leaves the identities
intact while the dual noise the backend leaves behind shrinks with the
same factor, keeping identity residuals well under tolerance on long
horizons.  In the weighted mode the scale is additionally divided by
max(1, beta) but floored so the reactive weight stays above the
solver's resolution at large beta.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import ConicProblem, ConicSolution, SocSlice, SolveError
from .feeder import FeederModel, sensitivity_matrices
from .thermal import ThermalParams

OBJECTIVE_MODES = ("curtailment_plus_q", "curtailment_only")

# availability below this is treated as "no generation": the curtailment
# box collapses to an equality instead of a zero-width inequality pair
_PG_ZERO = 1e-9

# objective pre-scale; duals and their residual noise shrink with it,
# while the argmin and every reported quantity are unchanged
_OBJ_SCALE = 1e-2


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 1
    beta: float = 1e5
    objective_mode: str = "curtailment_plus_q"
    eps_feas: float = conic.EPS_FEAS
    eps_gap: float = conic.EPS_GAP
    eps_tight: float = conic.EPS_TIGHT
    eps_bind: float = conic.EPS_BIND
    backend: str = "clarabel"

    def __post_init__(self) -> None:
        if not (isinstance(self.horizon, int) and self.horizon >= 1):
            raise ValueError(f"horizon must be an integer >= 1, got {self.horizon}")
        if not (self.beta >= 0):
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ValueError(f"objective_mode must be one of {OBJECTIVE_MODES}")
        for name in ("eps_feas", "eps_gap", "eps_tight", "eps_bind"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be > 0")
        if self.backend not in conic.BACKENDS:
            raise ValueError(f"backend must be one of {conic.BACKENDS}")


@dataclass(frozen=True)
class HorizonInputs:
    """Forecast bundle for one solve: arrays indexed [h] or [h, node-1]."""

    p_c: np.ndarray
    q_c: np.ndarray
    p_g: np.ndarray
    v0: np.ndarray
    t_a: np.ndarray
    t_meas: float

    def __post_init__(self) -> None:
        for name in ("p_c", "q_c", "p_g", "v0", "t_a"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        h, n = self.p_c.shape
        if self.q_c.shape != (h, n) or self.p_g.shape != (h, n):
            raise ValueError("p_c, q_c, p_g must share shape (H, N)")
        if self.v0.shape != (h,) or self.t_a.shape != (h,):
            raise ValueError("v0 and t_a must have shape (H,)")
        arrays = (self.p_c, self.q_c, self.p_g, self.v0, self.t_a)
        if not all(np.all(np.isfinite(a)) for a in arrays) or not np.isfinite(self.t_meas):
            raise ValueError("forecast inputs must be finite")
        if np.any(self.p_g < -_PG_ZERO):
            raise ValueError("available generation p_g must be nonnegative")

    @property
    def horizon(self) -> int:
        return self.p_c.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.p_c.shape[1]


@dataclass(frozen=True)
class ControlPlan:
    """Optimal trajectories mapped back to named quantities.

    Shapes: (H, N) for p_cr, q_g, v; (H,) for t_next (= T(h+1)),
    p_total, q_total (p.u.) and e (MVA^2).  objective is in the
    original unscaled units of the configured mode.
    """

    p_cr: np.ndarray
    q_g: np.ndarray
    v: np.ndarray
    t_next: np.ndarray
    p_total: np.ndarray
    q_total: np.ndarray
    e: np.ndarray
    objective: float


class _Layout:
    """Index arithmetic for the per-step variable blocks."""

    def __init__(self, n_nodes: int, horizon: int):
        self.n = n_nodes
        self.h = horizon
        self.per_step = 5 * n_nodes + 4

    def base(self, h: int) -> int:
        return h * self.per_step

    def p(self, h: int, j: int) -> int:  # j is 0-based here and below
        return self.base(h) + j

    def q(self, h: int, j: int) -> int:
        return self.base(h) + self.n + j

    def v(self, h: int, j: int) -> int:
        return self.base(h) + 2 * self.n + j

    def p_cr(self, h: int, j: int) -> int:
        return self.base(h) + 3 * self.n + j

    def q_g(self, h: int, j: int) -> int:
        return self.base(h) + 4 * self.n + j

    def temp(self, h: int) -> int:
        return self.base(h) + 5 * self.n

    def p_tot(self, h: int) -> int:
        return self.base(h) + 5 * self.n + 1

    def q_tot(self, h: int) -> int:
        return self.base(h) + 5 * self.n + 2

    def e(self, h: int) -> int:
        return self.base(h) + 5 * self.n + 3

    @property
    def n_vars(self) -> int:
        return self.h * self.per_step


def n_variables(horizon: int, n_nodes: int) -> int:
    """Decision-variable count H (5N + 4) of the relaxed problem."""
    return horizon * (5 * n_nodes + 4)


def build_problem(
    model: FeederModel,
    thermal: ThermalParams,
    cfg: MpcConfig,
    inputs: HorizonInputs,
) -> ConicProblem:
    """Assemble the relaxed horizon problem in canonical conic form."""
    n = model.n_nodes
    horizon = cfg.horizon
    if inputs.n_nodes != n:
        raise ValueError(f"inputs are for {inputs.n_nodes} nodes, model has {n}")
    if inputs.horizon != horizon:
        raise ValueError(f"inputs cover {inputs.horizon} steps, config horizon is {horizon}")
    s_max = model.s_max_vector()
    over = inputs.p_g > s_max[None, :] + 1e-9
    if np.any(over):
        h_bad, j_bad = map(int, np.argwhere(over)[0])
        raise ValueError(
            f"available generation exceeds inverter rating at h={h_bad}, node {j_bad + 1}: "
            f"p_g={inputs.p_g[h_bad, j_bad]:.6g} > s_max={s_max[j_bad]:.6g}"
        )
    if inputs.t_meas > thermal.t_max:
        warnings.warn(
            f"measured temperature {inputs.t_meas:.3f} degC exceeds the limit "
            f"{thermal.t_max:.3f} degC; the problem may be infeasible",
            stacklevel=2,
        )

    lay = _Layout(n, horizon)
    rmat, xmat = sensitivity_matrices(model)
    pv = model.pv_nodes()
    sigma = model.s_base_mva

    var_names: list[str] = []
    for h in range(horizon):
        var_names += [f"p[{h}][{j + 1}]" for j in range(n)]
        var_names += [f"q[{h}][{j + 1}]" for j in range(n)]
        var_names += [f"v[{h}][{j + 1}]" for j in range(n)]
        var_names += [f"p_cr[{h}][{j + 1}]" for j in range(n)]
        var_names += [f"q_g[{h}][{j + 1}]" for j in range(n)]
        var_names += [f"T[{h + 1}]", f"P_total[{h}]", f"Q_total[{h}]", f"e[{h}]"]

    # the floor keeps the reactive weight above solver noise at large beta,
    # where 1/beta alone would push it into the duality-gap floor and the
    # returned e would pick up spurious slack on cap-free steps
    scale = max(_OBJ_SCALE / max(1.0, cfg.beta), 1e-5)
    quad = np.zeros(lay.n_vars)
    for h in range(horizon):
        for j in range(n):
            if cfg.objective_mode == "curtailment_plus_q":
                quad[lay.p_cr(h, j)] = cfg.beta * scale
                quad[lay.q_g(h, j)] = scale
            else:
                quad[lay.p_cr(h, j)] = _OBJ_SCALE
    lin = np.zeros(lay.n_vars)

    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    b_eq: list[float] = []
    eq_names: list[str] = []

    def emit(cs: list[tuple[int, float]], rhs: float, name: str) -> None:
        r = len(b_eq)
        for c, val in cs:
            rows.append(r)
            cols.append(c)
            vals.append(val)
        b_eq.append(rhs)
        eq_names.append(name)

    for h in range(horizon):
        for j in range(n):
            # net real injection: p = p_g - p_cr - p_c
            emit(
                [(lay.p(h, j), 1.0), (lay.p_cr(h, j), 1.0)],
                inputs.p_g[h, j] - inputs.p_c[h, j],
                f"balance.p[{h}][{j + 1}]",
            )
            # net reactive injection: q = q_g - q_c
            emit(
                [(lay.q(h, j), 1.0), (lay.q_g(h, j), -1.0)],
                -inputs.q_c[h, j],
                f"balance.q[{h}][{j + 1}]",
            )
            # linearized voltage coupling: v = R p + X q + v0 1
            cs = [(lay.v(h, j), 1.0)]
            cs += [(lay.p(h, k), -rmat[j, k]) for k in range(n)]
            cs += [(lay.q(h, k), -xmat[j, k]) for k in range(n)]
            emit(cs, inputs.v0[h], f"voltage[{h}][{j + 1}]")
        # aggregate head flows seen by the transformer
        emit(
            [(lay.p_tot(h), 1.0)] + [(lay.p(h, j), -1.0) for j in range(n)],
            0.0,
            f"total.P[{h}]",
        )
        emit(
            [(lay.q_tot(h), 1.0)] + [(lay.q(h, j), -1.0) for j in range(n)],
            0.0,
            f"total.Q[{h}]",
        )
        # hot-spot update: T(h+1) = a T(h) + b e(h) + c T_a(h) + d, e in MVA^2
        cs = [(lay.temp(h), 1.0), (lay.e(h), -thermal.b)]
        rhs = thermal.c * inputs.t_a[h] + thermal.d
        if h == 0:
            rhs += thermal.a * inputs.t_meas
        else:
            cs.append((lay.temp(h - 1), -thermal.a))
        emit(cs, rhs, f"thermal[{h}]")
        # nodes without generation get pinned setpoints
        for j in range(n):
            node = j + 1
            if node not in model.inverters:
                emit([(lay.p_cr(h, j), 1.0)], 0.0, f"fix.p_cr[{h}][{node}]")
                emit([(lay.q_g(h, j), 1.0)], 0.0, f"fix.q_g[{h}][{node}]")
            elif inputs.p_g[h, j] <= _PG_ZERO:
                emit([(lay.p_cr(h, j), 1.0)], 0.0, f"fix.p_cr[{h}][{node}]")

    a_eq = sp.coo_matrix((vals, (rows, cols)), shape=(len(b_eq), lay.n_vars)).tocsr()

    g_rows: list[int] = []
    g_cols: list[int] = []
    g_vals: list[float] = []
    h_orth: list[float] = []
    orth_names: list[str] = []

    def emit_le(cs: list[tuple[int, float]], rhs: float, name: str) -> None:
        r = len(h_orth)
        for c, val in cs:
            g_rows.append(r)
            g_cols.append(c)
            g_vals.append(val)
        h_orth.append(rhs)
        orth_names.append(name)

    for h in range(horizon):
        # hot-spot ceiling
        emit_le([(lay.temp(h), 1.0)], thermal.t_max, f"temp_cap[{h}]")
        for j in range(n):
            node = j + 1
            # voltage band
            emit_le([(lay.v(h, j), 1.0)], model.v_max, f"v_max[{h}][{node}]")
            emit_le([(lay.v(h, j), -1.0)], -model.v_min, f"v_min[{h}][{node}]")
            # curtailment box, only when it has width
            if node in model.inverters and inputs.p_g[h, j] > _PG_ZERO:
                emit_le([(lay.p_cr(h, j), 1.0)], inputs.p_g[h, j], f"curtail_ub[{h}][{node}]")
                emit_le([(lay.p_cr(h, j), -1.0)], 0.0, f"curtail_lb[{h}][{node}]")

    g_orth = sp.coo_matrix(
        (g_vals, (g_rows, g_cols)), shape=(len(h_orth), lay.n_vars)
    ).tocsr()

    soc: list[SocSlice] = []
    for h in range(horizon):
        # relaxed squared flow: || (2 sigma P_tot, 2 sigma Q_tot, e - 1) || <= e + 1  <=>  e >= sigma^2 (P^2+Q^2)
        g = sp.coo_matrix(
            (
                [-1.0, -2.0 * sigma, -2.0 * sigma, -1.0],
                ([0, 1, 2, 3], [lay.e(h), lay.p_tot(h), lay.q_tot(h), lay.e(h)]),
            ),
            shape=(4, lay.n_vars),
        ).tocsr()
        soc.append(SocSlice(f"flow_relax[{h}]", g, np.array([1.0, 0.0, 0.0, -1.0])))
        # inverter capability per unit: || (q_g, p_g - p_cr) || <= s_max
        for node in pv:
            j = node - 1
            g = sp.coo_matrix(
                ([-1.0, 1.0], ([1, 2], [lay.q_g(h, j), lay.p_cr(h, j)])),
                shape=(3, lay.n_vars),
            ).tocsr()
            rhs = np.array([s_max[j], 0.0, inputs.p_g[h, j]])
            soc.append(SocSlice(f"inverter_cap[{h}][{node}]", g, rhs))

    meta = {
        "horizon": horizon,
        "n_nodes": n,
        "pv_nodes": pv,
        "s_base_mva": sigma,
        "s_max": s_max,
        "p_g": inputs.p_g.copy(),
        "v_min": model.v_min,
        "v_max": model.v_max,
        "t_max": thermal.t_max,
        "beta": cfg.beta,
        "objective_mode": cfg.objective_mode,
        "objective_scale": 1.0 / scale,
        "eps_feas": cfg.eps_feas,
    }
    return ConicProblem(
        quad=quad,
        lin=lin,
        var_names=var_names,
        a_eq=a_eq,
        b_eq=np.array(b_eq),
        eq_names=eq_names,
        g_orth=g_orth,
        h_orth=np.array(h_orth),
        orth_names=orth_names,
        soc=soc,
        meta=meta,
    )


def extract_plan(problem: ConicProblem, solution: ConicSolution) -> ControlPlan:
    """Map a solution vector back to named trajectories and re-check the
    plan against the original constraints within eps_feas."""
    if solution.status != conic.OPTIMAL:
        raise SolveError(f"cannot extract a plan from a {solution.status} solve",
                         solution.status)
    meta = problem.meta
    horizon, n = meta["horizon"], meta["n_nodes"]
    lay = _Layout(n, horizon)
    x = solution.x

    def block(getter) -> np.ndarray:
        return np.array([[x[getter(h, j)] for j in range(n)] for h in range(horizon)])

    p_cr = block(lay.p_cr)
    q_g = block(lay.q_g)
    v = block(lay.v)
    t_next = np.array([x[lay.temp(h)] for h in range(horizon)])
    p_total = np.array([x[lay.p_tot(h)] for h in range(horizon)])
    q_total = np.array([x[lay.q_tot(h)] for h in range(horizon)])
    e = np.array([x[lay.e(h)] for h in range(horizon)])

    eps = meta["eps_feas"]
    p_g = meta["p_g"]
    s_max = meta["s_max"]
    if np.any(p_cr < -eps) or np.any(p_cr > p_g + eps):
        raise ValueError("plan violates curtailment bounds beyond eps_feas")
    cap = q_g**2 + (p_g - p_cr) ** 2
    if np.any(cap > s_max[None, :] ** 2 + eps):
        raise ValueError("plan violates inverter capability beyond eps_feas")
    if np.any(t_next > meta["t_max"] + eps):
        raise ValueError("plan violates the temperature limit beyond eps_feas")
    if np.any(v < meta["v_min"] - eps) or np.any(v > meta["v_max"] + eps):
        raise ValueError("plan violates voltage bounds beyond eps_feas")

    if meta["objective_mode"] == "curtailment_plus_q":
        objective = float(meta["beta"] * np.sum(p_cr**2) + np.sum(q_g**2))
    else:
        objective = float(np.sum(p_cr**2))
    return ControlPlan(
        p_cr=p_cr,
        q_g=q_g,
        v=v,
        t_next=t_next,
        p_total=p_total,
        q_total=q_total,
        e=e,
        objective=objective,
    )
