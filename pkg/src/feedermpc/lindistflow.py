"""Linear (LinDistFlow) power-flow evaluation used inside the controller
model: net injections, voltage magnitudes, and head-of-feeder totals.

Voltages follow the magnitude-form linearization

    v = R p + X q + v0 1

with R, X from :func:`feedermpc.feeder.sensitivity_matrices`.  The form
carries no losses, which is what makes it overestimate both voltage and
transformer loading on reverse-flow scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feeder import FeederModel, reduced_incidence

# slack for curtailment-bound checks on solver output
_ETOL = 1e-9


@dataclass(frozen=True)
class InjectionState:
    """Net nodal injections in p.u., export-positive."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError(f"p and q must be equal-length vectors, got {p.shape}, {q.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("injections must be finite")


def net_injections(
    p_g: np.ndarray,
    p_cr: np.ndarray,
    p_c: np.ndarray,
    q_g: np.ndarray,
    q_c: np.ndarray,
) -> InjectionState:
    """Net injections p = p_g - p_cr - p_c, q = q_g - q_c.

    Curtailment must satisfy 0 <= p_cr <= p_g elementwise (a small
    numerical slack is allowed for solver output).
    """
    p_g, p_cr, p_c, q_g, q_c = (np.asarray(a, dtype=float) for a in (p_g, p_cr, p_c, q_g, q_c))
    if not (p_g.shape == p_cr.shape == p_c.shape == q_g.shape == q_c.shape):
        raise ValueError("all injection component vectors must share one shape")
    if np.any(p_cr < -_ETOL) or np.any(p_cr > p_g + _ETOL):
        j = int(np.argmax(np.maximum(-p_cr, p_cr - p_g)))
        raise ValueError(
            f"curtailment out of [0, p_g] at node {j + 1}: p_cr={p_cr[j]:.6g}, p_g={p_g[j]:.6g}"
        )
    return InjectionState(p=p_g - p_cr - p_c, q=q_g - q_c)


def voltages(rmat: np.ndarray, xmat: np.ndarray, inj: InjectionState, v0: float) -> np.ndarray:
    """v = R p + X q + v0 1."""
    if v0 <= 0.0:
        raise ValueError(f"substation voltage must be positive, got {v0}")
    return rmat @ inj.p + xmat @ inj.q + v0


def total_flows(inj: InjectionState) -> tuple[float, float]:
    """Head-of-feeder totals (P_total, Q_total) = (sum p_j, sum q_j), lossless."""
    return float(np.sum(inj.p)), float(np.sum(inj.q))


def branch_flows(model: FeederModel, inj: InjectionState) -> tuple[np.ndarray, np.ndarray]:
    """Per-line flows P = (A^T)^{-1} p, Q = (A^T)^{-1} q.

    Diagnostic only (plots); the controller constrains voltages and
    totals, never individual branches.  Positive flow points away from
    the substation.
    """
    at = reduced_incidence(model).T
    return np.linalg.solve(at, inj.p), np.linalg.solve(at, inj.q)
