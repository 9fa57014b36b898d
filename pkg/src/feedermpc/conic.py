"""Canonical conic-program form, solver adapters, and the KKT / tightness
diagnostics for the relaxed controller problem.

A :class:`ConicProblem` is

    minimize    sum_i quad_i x_i^2 + lin^T x
    subject to  A_eq x = b_eq
                G_orth x <= h_orth
                h_k - G_k x in SOC(d_k)     for each second-order cone slice k

Every row and variable carries a name so duals can be read back against
the controller's Lagrangian.  Backend duals are normalized to the
convention  grad f + A_eq^T nu + G^T z = 0  with z >= 0 on the orthant
block and z in the (self-dual) second-order cone on each SOC slice;
both supported backends already report duals in this convention.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
import scipy.sparse as sp

from .thermal import ThermalParams

if TYPE_CHECKING:  # only for annotations; mpc imports this module at runtime
    from .mpc import ControlPlan, MpcConfig
    from .feeder import FeederModel

# adapter-contract thresholds; MpcConfig defaults point here
EPS_FEAS = 1e-6
EPS_GAP = 1e-8
EPS_TIGHT = 1e-6  # scaled by max(1, e(h))
EPS_BIND = 1e-4  # p.u., voltage "non-binding" classification

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
MAXITER = "MaxIter"

BACKENDS = ("clarabel", "cvxopt")


class SolveError(RuntimeError):
    """Solve ended in a non-optimal status the caller cannot use."""

    def __init__(self, message: str, status: str):
        super().__init__(message)
        self.status = status


# when set, every Optimal solve appends its KKT report here (audit hook)
_kkt_audit: list["KktReport"] | None = None


def enable_kkt_audit() -> None:
    """Record a KKT report for every Optimal solve until disabled."""
    global _kkt_audit
    _kkt_audit = []


def disable_kkt_audit() -> None:
    global _kkt_audit
    _kkt_audit = None


def kkt_audit_reports() -> list["KktReport"]:
    """Reports recorded since :func:`enable_kkt_audit`, in solve order."""
    return list(_kkt_audit) if _kkt_audit is not None else []


def _record(problem: ConicProblem, sol: "ConicSolution") -> "ConicSolution":
    if _kkt_audit is not None and sol.status == OPTIMAL:
        _kkt_audit.append(kkt_residuals(problem, sol))
    return sol


@dataclass(frozen=True)
class SocSlice:
    """One second-order cone slice: h - G x in SOC(d), d >= 2, row 0 is the top."""

    name: str
    rows: sp.csr_matrix
    rhs: np.ndarray

    @property
    def dim(self) -> int:
        return self.rows.shape[0]


class ConicProblem:
    """Immutable canonical problem with named variables and rows."""

    def __init__(
        self,
        quad: np.ndarray,
        lin: np.ndarray,
        var_names: Sequence[str],
        a_eq: sp.csr_matrix,
        b_eq: np.ndarray,
        eq_names: Sequence[str],
        g_orth: sp.csr_matrix,
        h_orth: np.ndarray,
        orth_names: Sequence[str],
        soc: Sequence[SocSlice] = (),
        meta: dict | None = None,
    ):
        self.quad = np.asarray(quad, dtype=float)
        self.lin = np.asarray(lin, dtype=float)
        self.var_names = tuple(var_names)
        self.a_eq = a_eq.tocsr()
        self.b_eq = np.asarray(b_eq, dtype=float)
        self.eq_names = tuple(eq_names)
        self.g_orth = g_orth.tocsr()
        self.h_orth = np.asarray(h_orth, dtype=float)
        self.orth_names = tuple(orth_names)
        self.soc = tuple(soc)
        self.meta = dict(meta) if meta else {}

        n = self.n_vars
        if self.quad.shape != (n,) or self.lin.shape != (n,):
            raise ValueError("objective vectors must match variable count")
        if np.any(self.quad < 0):
            raise ValueError("quadratic diagonal must be nonnegative")
        if self.a_eq.shape != (len(self.eq_names), n) or self.b_eq.shape != (len(self.eq_names),):
            raise ValueError("equality block dimensions inconsistent")
        if self.g_orth.shape != (len(self.orth_names), n) or self.h_orth.shape != (
            len(self.orth_names),
        ):
            raise ValueError("orthant block dimensions inconsistent")
        for sl in self.soc:
            if sl.dim < 2:
                raise ValueError(f"SOC slice {sl.name} has dimension {sl.dim} < 2")
            if sl.rows.shape[1] != n or sl.rhs.shape != (sl.dim,):
                raise ValueError(f"SOC slice {sl.name} dimensions inconsistent")
        self._var_index = {name: i for i, name in enumerate(self.var_names)}
        self._eq_index = {name: i for i, name in enumerate(self.eq_names)}
        self._orth_index = {name: i for i, name in enumerate(self.orth_names)}
        self._soc_index = {sl.name: k for k, sl in enumerate(self.soc)}

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    def var(self, name: str) -> int:
        return self._var_index[name]

    def eq_row(self, name: str) -> int:
        return self._eq_index[name]

    def orth_row(self, name: str) -> int:
        return self._orth_index[name]

    def soc_slice(self, name: str) -> int:
        return self._soc_index[name]

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.quad @ (x * x) + self.lin @ x)

    def dump_json(self, path: str) -> None:
        """Debug dump, matrices in coordinate-triplet form, for cross-solver reproduction."""

        def triplets(mat: sp.csr_matrix) -> dict:
            coo = mat.tocoo()
            return {
                "shape": list(coo.shape),
                "rows": coo.row.tolist(),
                "cols": coo.col.tolist(),
                "vals": coo.data.tolist(),
            }

        doc = {
            "quad": self.quad.tolist(),
            "lin": self.lin.tolist(),
            "var_names": list(self.var_names),
            "eq": {"A": triplets(self.a_eq), "b": self.b_eq.tolist(), "names": list(self.eq_names)},
            "orth": {
                "G": triplets(self.g_orth),
                "h": self.h_orth.tolist(),
                "names": list(self.orth_names),
            },
            "soc": [
                {"name": sl.name, "G": triplets(sl.rows), "h": sl.rhs.tolist()} for sl in self.soc
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)


@dataclass
class ConicSolution:
    """Primal/dual result of one solve, duals in the normalized convention."""

    status: str
    x: np.ndarray
    nu: np.ndarray
    z_orth: np.ndarray
    z_soc: list[np.ndarray]
    objective: float
    primal_residual: float
    dual_residual: float
    duality_gap: float
    solve_time: float
    iterations: int
    backend: str
    problem: ConicProblem

    def var(self, name: str) -> float:
        return float(self.x[self.problem.var(name)])

    def eq_dual(self, name: str) -> float:
        return float(self.nu[self.problem.eq_row(name)])

    def orth_dual(self, name: str) -> float:
        return float(self.z_orth[self.problem.orth_row(name)])

    def soc_dual(self, name: str) -> np.ndarray:
        return self.z_soc[self.problem.soc_slice(name)]


def _residuals(
    problem: ConicProblem,
    x: np.ndarray,
    nu: np.ndarray,
    z_orth: np.ndarray,
    z_soc: list[np.ndarray],
) -> tuple[float, float, float, float]:
    """(primal, dual, relative gap, max complementarity product)."""
    primal = 0.0
    if problem.b_eq.size:
        primal = float(np.max(np.abs(problem.a_eq @ x - problem.b_eq)))
    comp = 0.0
    gap = 0.0
    if problem.h_orth.size:
        s = problem.h_orth - problem.g_orth @ x
        primal = max(primal, float(np.max(-s, initial=0.0)))
        comp = float(np.max(np.abs(z_orth * s), initial=0.0))
        gap += float(z_orth @ s)
    for sl, z in zip(problem.soc, z_soc):
        s = sl.rhs - sl.rows @ x
        primal = max(primal, max(0.0, float(np.linalg.norm(s[1:]) - s[0])))
        comp = max(comp, abs(float(z @ s)))
        gap += float(z @ s)
    grad = 2.0 * problem.quad * x + problem.lin
    if problem.b_eq.size:
        grad = grad + problem.a_eq.T @ nu
    if problem.h_orth.size:
        grad = grad + problem.g_orth.T @ z_orth
    for sl, z in zip(problem.soc, z_soc):
        grad = grad + sl.rows.T @ z
    dual = float(np.max(np.abs(grad), initial=0.0))
    if problem.h_orth.size:
        dual = max(dual, float(np.max(-z_orth, initial=0.0)))
    for z in z_soc:
        dual = max(dual, max(0.0, float(np.linalg.norm(z[1:]) - z[0])))
    rel_gap = abs(gap) / max(1.0, abs(problem.objective_value(x)))
    return primal, dual, rel_gap, comp


def solve(
    problem: ConicProblem,
    backend: str = "clarabel",
    eps_feas: float = EPS_FEAS,
    eps_gap: float = EPS_GAP,
    max_iter: int = 200,
) -> ConicSolution:
    """Solve through the named backend; residuals are re-verified in-process.

    A backend claim of optimality is downgraded to MaxIter if the
    returned point fails the adapter thresholds, so status=Optimal
    always means the residual contract holds.  The clarabel backend
    retries once without equilibration when the first attempt fails
    verification; both attempts are deterministic.
    """
    if backend == "clarabel":
        sol = _arbitrate(_solve_clarabel(problem, max_iter), eps_feas, eps_gap)
        if sol.status == MAXITER:
            # stalled runs are usually cured by disabling equilibration: the
            # model data is already near unit scale, and the Ruiz scaling can
            # park the iterates just short of the gap tolerance on steps with
            # degenerate active sets
            retry = _arbitrate(
                _solve_clarabel(problem, max_iter, equilibrate=False), eps_feas, eps_gap
            )
            if retry.status == OPTIMAL or retry.duality_gap < sol.duality_gap:
                sol = retry
        return _record(problem, sol)
    if backend == "cvxopt":
        return _record(problem, _arbitrate(_solve_cvxopt(problem, max_iter), eps_feas, eps_gap))
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def _arbitrate(sol: ConicSolution, eps_feas: float, eps_gap: float) -> ConicSolution:
    # the backend's claim is advisory: status follows the verified residuals
    # (a stalled solver often still holds a point far inside the contract)
    if sol.status in (OPTIMAL, MAXITER):
        ok = (
            sol.primal_residual <= eps_feas
            and sol.dual_residual <= eps_feas
            and sol.duality_gap <= eps_gap
        )
        sol.status = OPTIMAL if ok else MAXITER
    return sol


def _stack_cones(problem: ConicProblem) -> tuple[sp.csr_matrix, np.ndarray]:
    blocks = [problem.a_eq, problem.g_orth] + [sl.rows for sl in problem.soc]
    rhs = [problem.b_eq, problem.h_orth] + [sl.rhs for sl in problem.soc]
    mat = sp.vstack([b for b in blocks if b.shape[0]], format="csc") if any(
        b.shape[0] for b in blocks
    ) else sp.csc_matrix((0, problem.n_vars))
    vec = np.concatenate([v for v in rhs if v.size]) if any(v.size for v in rhs) else np.zeros(0)
    return mat, vec


def _split_duals(problem: ConicProblem, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, list]:
    m_eq = len(problem.eq_names)
    m_orth = len(problem.orth_names)
    nu = z[:m_eq]
    z_orth = z[m_eq : m_eq + m_orth]
    z_soc = []
    at = m_eq + m_orth
    for sl in problem.soc:
        z_soc.append(z[at : at + sl.dim])
        at += sl.dim
    return nu, z_orth, z_soc


def _solve_clarabel(
    problem: ConicProblem, max_iter: int, equilibrate: bool = True
) -> ConicSolution:
    import clarabel

    a, b = _stack_cones(problem)
    cones = []
    if len(problem.eq_names):
        cones.append(clarabel.ZeroConeT(len(problem.eq_names)))
    if len(problem.orth_names):
        cones.append(clarabel.NonnegativeConeT(len(problem.orth_names)))
    for sl in problem.soc:
        cones.append(clarabel.SecondOrderConeT(sl.dim))
    p_mat = sp.diags(2.0 * problem.quad, format="csc")
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    # push well past the adapter thresholds so dual-based identity checks
    # (cone alignment goes as sqrt(gap)) land below 1e-6; if the solver
    # stalls it may still exit AlmostSolved at the reduced tolerances,
    # which are chosen to stay within the adapter contract
    settings.tol_feas = 1e-10
    settings.tol_gap_abs = 1e-12
    settings.tol_gap_rel = 1e-12
    settings.reduced_tol_feas = 1e-7
    settings.reduced_tol_gap_abs = 5e-9
    settings.reduced_tol_gap_rel = 5e-9
    settings.equilibrate_enable = equilibrate
    solver = clarabel.DefaultSolver(p_mat, problem.lin, a, b, cones, settings)
    out = solver.solve()
    name = str(out.status)
    if name in ("Solved", "AlmostSolved"):
        status = OPTIMAL
    elif name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = INFEASIBLE
    elif name in ("DualInfeasible", "AlmostDualInfeasible"):
        status = UNBOUNDED
    else:
        status = MAXITER
    x = np.asarray(out.x, dtype=float)
    nu, z_orth, z_soc = _split_duals(problem, np.asarray(out.z, dtype=float))
    if status in (INFEASIBLE, UNBOUNDED):
        primal = dual = gap = np.inf
    else:
        primal, dual, gap, _ = _residuals(problem, x, nu, z_orth, z_soc)
    return ConicSolution(
        status=status,
        x=x,
        nu=nu,
        z_orth=z_orth,
        z_soc=z_soc,
        objective=problem.objective_value(x) if status not in (INFEASIBLE, UNBOUNDED) else np.nan,
        primal_residual=primal,
        dual_residual=dual,
        duality_gap=gap,
        solve_time=float(out.solve_time),
        iterations=int(out.iterations),
        backend="clarabel",
        problem=problem,
    )


def _to_cvxopt_sparse(mat: sp.csr_matrix):
    from cvxopt import spmatrix

    coo = mat.tocoo()
    return spmatrix(
        coo.data.tolist(), coo.row.tolist(), coo.col.tolist(), size=coo.shape, tc="d"
    )


def _solve_cvxopt(problem: ConicProblem, max_iter: int) -> ConicSolution:
    from cvxopt import matrix, solvers

    n = problem.n_vars
    p_mat = _to_cvxopt_sparse(sp.diags(2.0 * problem.quad).tocsr())
    q = matrix(problem.lin)
    g_blocks = [problem.g_orth] + [sl.rows for sl in problem.soc]
    h_blocks = [problem.h_orth] + [sl.rhs for sl in problem.soc]
    m_cone = sum(b.shape[0] for b in g_blocks)
    dims = {"l": len(problem.orth_names), "q": [sl.dim for sl in problem.soc], "s": []}
    g = _to_cvxopt_sparse(sp.vstack(g_blocks, format="csr")) if m_cone else None
    h = matrix(np.concatenate(h_blocks)) if m_cone else None
    a = _to_cvxopt_sparse(problem.a_eq) if len(problem.eq_names) else None
    b = matrix(problem.b_eq) if len(problem.eq_names) else None
    opts = {
        "show_progress": False,
        "maxiters": max_iter,
        "abstol": 1e-9,
        "reltol": 1e-9,
        "feastol": 1e-9,
        "refinement": 2,
    }
    def failed(elapsed: float, iterations: int) -> ConicSolution:
        return ConicSolution(
            status=MAXITER,
            x=np.zeros(n),
            nu=np.zeros(len(problem.eq_names)),
            z_orth=np.zeros(len(problem.orth_names)),
            z_soc=[np.zeros(sl.dim) for sl in problem.soc],
            objective=np.nan,
            primal_residual=np.inf,
            dual_residual=np.inf,
            duality_gap=np.inf,
            solve_time=elapsed,
            iterations=iterations,
            backend="cvxopt",
            problem=problem,
        )

    t0 = time.perf_counter()
    try:
        out = solvers.coneqp(
            p_mat, q, G=g, h=h, dims=dims if m_cone else None, A=a, b=b, options=opts
        )
    except (ValueError, ZeroDivisionError, ArithmeticError):
        # coneqp assumes a feasible cone program and can abort mid-iteration
        # on infeasible or rank-deficient data; report a failed solve instead
        return failed(time.perf_counter() - t0, 0)
    elapsed = time.perf_counter() - t0
    status = OPTIMAL if out["status"] == "optimal" else MAXITER
    if out["x"] is None:
        return failed(elapsed, int(out.get("iterations", 0)))
    x = np.asarray(out["x"], dtype=float).ravel()
    nu = (
        np.asarray(out["y"], dtype=float).ravel()
        if out["y"] is not None
        else np.zeros(len(problem.eq_names))
    )
    z_all = (
        np.asarray(out["z"], dtype=float).ravel() if out["z"] is not None else np.zeros(0)
    )
    z_orth = z_all[: len(problem.orth_names)]
    z_soc = []
    at = len(problem.orth_names)
    for sl in problem.soc:
        z_soc.append(z_all[at : at + sl.dim])
        at += sl.dim
    primal, dual, gap, _ = _residuals(problem, x, nu, z_orth, z_soc)
    return ConicSolution(
        status=status,
        x=x,
        nu=nu,
        z_orth=z_orth,
        z_soc=z_soc,
        objective=problem.objective_value(x),
        primal_residual=primal,
        dual_residual=dual,
        duality_gap=gap,
        solve_time=elapsed,
        iterations=int(out["iterations"]),
        backend="cvxopt",
        problem=problem,
    )


@dataclass(frozen=True)
class KktReport:
    """Max absolute violation per KKT equation family.

    The named identities are evaluated through the variable name table:
    identity_temp is  -b nu_T(h+1) - lambda_e(h) = 0,  identity_flow_p
    is  2 lambda_e(h) s_base^2 P_total(h) + nu_P(h) = 0,  and
    identity_flow_q is the Q counterpart (the s_base^2 factor carries
    the p.u.->MVA conversion that lives inside e).
    """

    stationarity: float
    primal: float
    complementarity: float
    dual_cone: float
    identity_temp: float
    identity_flow_p: float
    identity_flow_q: float

    def families(self) -> dict[str, float]:
        return {
            "stationarity": self.stationarity,
            "primal": self.primal,
            "complementarity": self.complementarity,
            "dual_cone": self.dual_cone,
            "identity_temp": self.identity_temp,
            "identity_flow_p": self.identity_flow_p,
            "identity_flow_q": self.identity_flow_q,
        }

    @property
    def max_violation(self) -> float:
        return max(self.families().values())


def lambda_e(solution: ConicSolution, h: int) -> float:
    """Relaxation multiplier at step h, from the flow-relaxation cone dual.

    For the encoding ||(2 s_base P, 2 s_base Q, e-1)|| <= e+1 the e
    column hits dual rows 0 and 3, so lambda_e = z[0] + z[3].
    """
    z = solution.soc_dual(f"flow_relax[{h}]")
    return float(z[0] + z[3])


def lambda_s(solution: ConicSolution, h: int, node: int, s_max: float) -> float:
    """Inverter-capability multiplier, normalized so it prices s_max, at (h, node)."""
    z = solution.soc_dual(f"inverter_cap[{h}][{node}]")
    return float(z[0] / (2.0 * s_max)) if s_max > 0 else 0.0


def kkt_residuals(problem: ConicProblem, solution: ConicSolution) -> KktReport:
    """Evaluate stationarity, complementarity, primal feasibility, dual-cone
    membership, and the named temperature/flow identities on a solution."""
    if solution.status != OPTIMAL:
        raise SolveError(f"KKT check requires an Optimal solution, got {solution.status}",
                         solution.status)
    primal, dual, _, comp = _residuals(
        problem, solution.x, solution.nu, solution.z_orth, solution.z_soc
    )
    dual_cone = 0.0
    if len(problem.orth_names):
        dual_cone = float(np.max(-solution.z_orth, initial=0.0))
    for z in solution.z_soc:
        dual_cone = max(dual_cone, max(0.0, float(np.linalg.norm(z[1:]) - z[0])))

    id_temp = id_fp = id_fq = 0.0
    h = 0
    while f"flow_relax[{h}]" in problem._soc_index:
        lam = lambda_e(solution, h)
        nu_t = solution.eq_dual(f"thermal[{h}]")
        # recover s_base from the cone itself: row 1 holds -2 s_base on P_total
        cone = problem.soc[problem.soc_slice(f"flow_relax[{h}]")]
        s_base = -float(cone.rows[1, problem.var(f"P_total[{h}]")]) / 2.0
        thermal_b = _thermal_b_from_row(problem, h)
        id_temp = max(id_temp, abs(-thermal_b * nu_t - lam))
        p_tot = solution.var(f"P_total[{h}]")
        q_tot = solution.var(f"Q_total[{h}]")
        nu_p = solution.eq_dual(f"total.P[{h}]")
        nu_q = solution.eq_dual(f"total.Q[{h}]")
        id_fp = max(id_fp, abs(2.0 * lam * s_base**2 * p_tot + nu_p))
        id_fq = max(id_fq, abs(2.0 * lam * s_base**2 * q_tot + nu_q))
        h += 1
    return KktReport(
        stationarity=dual,
        primal=primal,
        complementarity=comp,
        dual_cone=dual_cone,
        identity_temp=id_temp,
        identity_flow_p=id_fp,
        identity_flow_q=id_fq,
    )


def _thermal_b_from_row(problem: ConicProblem, h: int) -> float:
    """Coefficient b read off the thermal equality row (the -b entry on e(h))."""
    row = problem.a_eq[problem.eq_row(f"thermal[{h}]"), :]
    col = problem.var(f"e[{h}]")
    return -float(row[0, col])


@dataclass(frozen=True)
class TightnessReport:
    """Per-step relaxation diagnostics for one solved horizon.

    rho[h] = e(h) - s_base^2 (P_total(h)^2 + Q_total(h)^2) in MVA^2;
    tight[h] means rho[h] <= eps_tight * max(1, e(h)).  theorem_applicable
    requires some step h* with positive curtailment somewhere and all
    voltages strictly interior at h*; h_star is the largest such step.
    """

    rho: np.ndarray
    lam_e: np.ndarray | None
    tight: np.ndarray
    voltage_binding: np.ndarray
    curtailing: list[tuple[int, int]]
    theorem_applicable: bool
    h_star: int | None
    reason: str = ""

    @property
    def tight_through_h_star(self) -> bool:
        if not self.theorem_applicable or self.h_star is None:
            return False
        return bool(np.all(self.tight[: self.h_star + 1]))


def tightness_report(
    plan: "ControlPlan",
    duals: ConicSolution | None,
    model: "FeederModel",
    cfg: "MpcConfig",
) -> TightnessReport:
    """Evaluate relaxation tightness and the exactness precondition on a plan.

    A step counts as curtailing only when its curtailment clears both the
    feasibility tolerance and the solver's own noise floor, which scales as
    sqrt(duality gap): an interior-point iterate leaves O(sqrt(mu)) residue
    in variables whose exact optimum sits on the bound, and flagging those
    ghost setpoints would misclassify an idle step as a curtailing one.
    """
    s2 = model.s_base_mva**2
    horizon = plan.e.shape[0]
    rho = plan.e - s2 * (plan.p_total**2 + plan.q_total**2)
    floor = -cfg.eps_feas * np.maximum(1.0, np.abs(plan.e))
    if np.any(rho < floor):
        h_bad = int(np.argmin(rho - floor))
        raise ValueError(
            f"relaxation constraint violated at h={h_bad}: rho={rho[h_bad]:.3e} MVA^2"
        )
    tight = rho <= cfg.eps_tight * np.maximum(1.0, plan.e)
    binding = np.zeros(horizon, dtype=bool)
    for h in range(horizon):
        v = plan.v[h]
        binding[h] = bool(
            np.any(v <= model.v_min + cfg.eps_bind) or np.any(v >= model.v_max - cfg.eps_bind)
        )
    curtail_eps = cfg.eps_feas
    if duals is not None and np.isfinite(duals.duality_gap):
        gap_abs = duals.duality_gap * max(1.0, abs(duals.objective))
        curtail_eps = max(curtail_eps, 4.0 * math.sqrt(max(gap_abs, 0.0)))
    curtailing = [
        (h, j + 1)
        for h in range(horizon)
        for j in range(plan.p_cr.shape[1])
        if plan.p_cr[h, j] > curtail_eps
    ]
    applicable_steps = sorted(
        {h for h, _ in curtailing if not binding[h]}
    )
    h_star = applicable_steps[-1] if applicable_steps else None
    lam = None
    reason = ""
    if duals is None:
        reason = "no duals supplied; theorem check skipped"
        applicable = False
    else:
        lam = np.array([lambda_e(duals, h) for h in range(horizon)])
        applicable = h_star is not None
        if not applicable:
            reason = (
                "no step with positive curtailment and interior voltages"
                if curtailing
                else "no curtailment anywhere"
            )
    return TightnessReport(
        rho=rho,
        lam_e=lam,
        tight=tight,
        voltage_binding=binding,
        curtailing=curtailing,
        theorem_applicable=applicable,
        h_star=h_star,
        reason=reason,
    )


@dataclass(frozen=True)
class DualRecursionResult:
    """Both sides of the temperature-dual recursion evaluated from solver duals."""

    max_deviation: float
    monotone: bool
    lam_e: np.ndarray
    recursion_rhs: np.ndarray
    lam_t: np.ndarray


def dual_recursion_check(
    duals: ConicSolution, thermal: ThermalParams, horizon: int
) -> DualRecursionResult:
    """Check lambda_e(h) = b sum_{k=h+1}^{H} a^{k-h-1} lambda_T(k).

    Derived from stationarity in T under non-binding voltages; raises if
    any voltage bound is within EPS_BIND of active at the solution.
    """
    problem = duals.problem
    x = duals.x
    for name in problem.orth_names:
        if name.startswith(("v_max[", "v_min[")):
            i = problem.orth_row(name)
            slack = problem.h_orth[i] - float(problem.g_orth[i, :] @ x)
            if slack < EPS_BIND:
                raise ValueError(
                    f"recursion derived under non-binding voltages; {name} slack {slack:.2e}"
                )
    lam_t = np.array([duals.orth_dual(f"temp_cap[{k}]") for k in range(horizon)])
    lam = np.array([lambda_e(duals, h) for h in range(horizon)])
    rhs = np.zeros(horizon)
    for h in range(horizon):
        # lambda_T(k) for k = h+1 .. H lives at orth row temp_cap[k-1]
        powers = thermal.a ** np.arange(0, horizon - h)
        rhs[h] = thermal.b * float(powers @ lam_t[h:horizon])
    deviation = float(np.max(np.abs(lam - rhs), initial=0.0))
    monotone = bool(np.all(np.diff(lam) <= 1e-9 * np.maximum(1.0, np.abs(lam[:-1]))))
    return DualRecursionResult(
        max_deviation=deviation, monotone=monotone, lam_e=lam, recursion_rhs=rhs, lam_t=lam_t
    )
