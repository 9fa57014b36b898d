"""Substation-transformer hot-spot temperature dynamics.

A one-minute linear regression in physical units,

    T(t+1) = a T(t) + b (P^2 + Q^2) + c T_a(t) + d,

with P, Q the transformer apparent-power components in MVA and b in
degC/MVA^2.  The same model serves as the controller's internal model
(relaxed) and as the plant's true thermal dynamics; callers convert
p.u. flows through s_base before entering this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class ThermalParams:
    """Regression coefficients plus the operating limit, all in degC/MVA units."""

    a: float = 0.9972
    b: float = 0.0241
    c: float = 0.0005
    d: float = 0.0931
    t_max: float = 56.0

    def __post_init__(self) -> None:
        for name in ("a", "b", "c", "d"):
            val = getattr(self, name)
            if not (0.0 < val < 1.0):
                raise ValueError(f"thermal coefficient {name} must lie in (0, 1), got {val}")
        if not math.isfinite(self.t_max):
            raise ValueError("t_max must be finite")

    def ambient_equilibrium(self, t_a: float) -> float:
        """Zero-flow fixed point (c T_a + d) / (1 - a)."""
        return (self.c * t_a + self.d) / (1.0 - self.a)


def temp_step(params: ThermalParams, temp: float, p_mva: float, q_mva: float, t_a: float) -> float:
    """One-step temperature update, flows in MVA."""
    return params.a * temp + params.b * (p_mva**2 + q_mva**2) + params.c * t_a + params.d


def steady_state_flow(params: ThermalParams, t_target: float, t_a: float) -> float:
    """Constant apparent power S (MVA) whose fixed point is t_target.

    Solves t_target = a t_target + b S^2 + c T_a + d for S.  Targets
    below the zero-flow equilibrium are unreachable and raise.
    """
    radicand = (t_target * (1.0 - params.a) - params.c * t_a - params.d) / params.b
    if radicand < 0.0:
        raise ValueError(
            f"target {t_target} degC is below the zero-flow equilibrium "
            f"{params.ambient_equilibrium(t_a):.4f} degC"
        )
    return math.sqrt(radicand)


def simulate_temperature(
    params: ThermalParams,
    t0: float,
    flows_mva: Sequence[tuple[float, float]],
    ambient: Sequence[float],
) -> list[float]:
    """Iterate temp_step over (P, Q) flow and ambient sequences.

    Returns the trajectory [T(0), T(1), ..., T(len)] of length len+1.
    """
    if len(flows_mva) != len(ambient):
        raise ValueError(f"flows ({len(flows_mva)}) and ambient ({len(ambient)}) lengths differ")
    traj = [float(t0)]
    for (p_mva, q_mva), t_a in zip(flows_mva, ambient):
        traj.append(temp_step(params, traj[-1], p_mva, q_mva, t_a))
    return traj
