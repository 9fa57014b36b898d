"""Ground-truth plant: full AC power flow on the radial chain plus the
true thermal dynamics.

The controller never sees this module's physics; it plans against
LinDistFlow and the relaxed thermal model, while the plant runs a
backward-forward sweep with constant-PQ injections and feeds the
transformer model with the actual head-of-feeder flow.  The sweep is
exact for radial feeders and needs no Jacobian machinery.

Sign conventions: nodal injections are export-positive; head flows
(p0, q0) are positive when the feeder exports to the grid, so
p0 = sum(p_j) - active losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feeder import FeederModel
from .lindistflow import InjectionState, net_injections
from .thermal import ThermalParams, temp_step

_CLAMP_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """Backward-forward sweep failed to converge; carries the last mismatch."""

    def __init__(self, iterations: int, mismatch: float):
        super().__init__(
            f"AC power flow did not converge after {iterations} iterations "
            f"(last mismatch {mismatch:.3e} p.u.)"
        )
        self.iterations = iterations
        self.mismatch = mismatch


@dataclass(frozen=True)
class ControlDecision:
    """Setpoints sent to the devices for one step, p.u., per node."""

    p_cr: np.ndarray
    q_g: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "p_cr", np.asarray(self.p_cr, dtype=float))
        object.__setattr__(self, "q_g", np.asarray(self.q_g, dtype=float))
        if self.p_cr.shape != self.q_g.shape or self.p_cr.ndim != 1:
            raise ValueError("decision vectors must be equal-length 1-D arrays")


@dataclass(frozen=True)
class PlantState:
    """Physical state carried across steps."""

    temperature: float
    time_index: int = 0
    last_decision: ControlDecision | None = None


@dataclass(frozen=True)
class AcSolution:
    """Converged power-flow result, p.u. on the system base."""

    v: np.ndarray
    p0: float
    q0: float
    loss_p: float
    loss_q: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class PlantStepResult:
    """What the plant reports after applying one decision for one step."""

    v: np.ndarray
    p0: float
    q0: float
    loss_p: float
    loss_q: float
    t_next: float
    applied: ControlDecision
    clamped: bool
    overvoltage: bool
    undervoltage: bool
    overtemp: bool
    iterations: int


def ac_power_flow(
    model: FeederModel,
    inj: InjectionState,
    v0: float,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> AcSolution:
    """Backward-forward sweep with constant-PQ injections and a stiff slack.

    Converges when the maximum nodal complex-power mismatch drops below
    ``tol`` (p.u.); raises :class:`ConvergenceError` after ``max_iter``
    sweeps otherwise.
    """
    n = model.n_nodes
    z = model.r + 1j * model.x
    s_inj = inj.p + 1j * inj.q
    v = np.full(n, complex(v0))
    j_branch = np.zeros(n, dtype=complex)
    mismatch = np.inf
    for it in range(1, max_iter + 1):
        # backward: accumulate branch currents from the leaf toward the head
        i_inj = np.conj(s_inj / v)
        j_branch = np.zeros(n, dtype=complex)
        for k in range(n - 1, -1, -1):
            downstream = j_branch[k + 1] if k + 1 < n else 0.0
            j_branch[k] = downstream - i_inj[k]
        # forward: propagate voltage drops from the slack
        upstream = complex(v0)
        for k in range(n):
            v[k] = upstream - z[k] * j_branch[k]
            upstream = v[k]
        # mismatch against the constant-PQ load model at the new voltages
        implied = np.empty(n, dtype=complex)
        for k in range(n):
            downstream = j_branch[k + 1] if k + 1 < n else 0.0
            implied[k] = v[k] * np.conj(j_branch[k] - downstream)
        mismatch = float(np.max(np.abs(implied + s_inj)))
        if mismatch < tol:
            s_head_in = v0 * np.conj(j_branch[0])
            loss = np.sum((model.r + 1j * model.x) * np.abs(j_branch) ** 2)
            return AcSolution(
                v=np.abs(v),
                p0=float(-s_head_in.real),
                q0=float(-s_head_in.imag),
                loss_p=float(loss.real),
                loss_q=float(loss.imag),
                iterations=it,
                converged=True,
            )
    raise ConvergenceError(max_iter, mismatch)


def clamp_decision(
    model: FeederModel, decision: ControlDecision, p_g: np.ndarray
) -> tuple[ControlDecision, bool]:
    """Project a decision onto the device limits.

    Curtailment is clipped to [0, p_g]; reactive output is clipped to
    the apparent-power circle at the resulting real output; nodes
    without an inverter get zeros.
    """
    n = model.n_nodes
    s_max = model.s_max_vector()
    p_cr = np.clip(decision.p_cr, 0.0, p_g)
    q_cap = np.sqrt(np.maximum(0.0, s_max**2 - (p_g - p_cr) ** 2))
    q_g = np.clip(decision.q_g, -q_cap, q_cap)
    has_inv = np.zeros(n, dtype=bool)
    for node in model.inverters:
        has_inv[node - 1] = True
    p_cr = np.where(has_inv, p_cr, 0.0)
    q_g = np.where(has_inv, q_g, 0.0)
    clamped = bool(
        np.any(np.abs(p_cr - decision.p_cr) > _CLAMP_TOL)
        or np.any(np.abs(q_g - decision.q_g) > _CLAMP_TOL)
    )
    return ControlDecision(p_cr=p_cr, q_g=q_g), clamped


def plant_step(
    state: PlantState,
    model: FeederModel,
    thermal: ThermalParams,
    applied: ControlDecision,
    exogenous,
) -> tuple[PlantState, PlantStepResult]:
    """Apply one decision for one step: AC power flow, then the true
    thermal update driven by the head flow converted to MVA.

    ``exogenous`` must carry arrays p_c, q_c, p_g and scalars v0, t_a
    for the step.  Out-of-range setpoints are clamped and flagged.
    """
    decision, clamped = clamp_decision(model, applied, exogenous.p_g)
    inj = net_injections(exogenous.p_g, decision.p_cr, exogenous.p_c, decision.q_g, exogenous.q_c)
    ac = ac_power_flow(model, inj, exogenous.v0)
    sigma = model.s_base_mva
    t_next = temp_step(thermal, state.temperature, ac.p0 * sigma, ac.q0 * sigma, exogenous.t_a)
    result = PlantStepResult(
        v=ac.v,
        p0=ac.p0,
        q0=ac.q0,
        loss_p=ac.loss_p,
        loss_q=ac.loss_q,
        t_next=t_next,
        applied=decision,
        clamped=clamped,
        overvoltage=bool(np.any(ac.v > model.v_max)),
        undervoltage=bool(np.any(ac.v < model.v_min)),
        overtemp=bool(t_next > thermal.t_max),
        iterations=ac.iterations,
    )
    new_state = PlantState(
        temperature=t_next,
        time_index=state.time_index + 1,
        last_decision=decision,
    )
    return new_state, result
