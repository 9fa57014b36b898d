"""Radial feeder model: topology, impedances, device ratings, and the
incidence / sensitivity matrices everything else is built on.

The feeder is a chain of N lines hanging off the substation (node 0):
line i connects node i-1 to node i.  All electrical quantities are
stored in per-unit on (s_base, v_base); conversion to physical MVA
happens only at the transformer-thermal boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LineSegment:
    """One series line segment, impedance in p.u. on the system base."""

    r: float
    x: float

    def __post_init__(self) -> None:
        if not (self.r > 0.0 and np.isfinite(self.r)):
            raise ValueError(f"line resistance must be > 0, got {self.r}")
        if not (self.x > 0.0 and np.isfinite(self.x)):
            raise ValueError(f"line reactance must be > 0, got {self.x}")


@dataclass(frozen=True)
class InverterSpec:
    """Apparent-power rating of a PV inverter, p.u. on the system base."""

    s_max: float

    def __post_init__(self) -> None:
        if not (self.s_max >= 0.0 and np.isfinite(self.s_max)):
            raise ValueError(f"inverter s_max must be >= 0, got {self.s_max}")


@dataclass(frozen=True)
class FeederModel:
    """Immutable radial feeder description.

    Node 0 is the substation and is not counted in ``n_nodes``; node j
    (1-based) is the receiving end of ``lines[j-1]``.  ``inverters``
    maps 1-based node numbers to inverter ratings; nodes absent from
    the map have no controllable device.
    """

    lines: tuple[LineSegment, ...]
    inverters: dict[int, InverterSpec] = field(default_factory=dict)
    s_base_mva: float = 2.5
    v_base_kv: float = 4.8
    v_min: float = 0.95
    v_max: float = 1.05

    def __post_init__(self) -> None:
        if len(self.lines) < 1:
            raise ValueError("feeder needs at least one line")
        if not (0.0 < self.v_min < self.v_max):
            raise ValueError(f"need 0 < v_min < v_max, got [{self.v_min}, {self.v_max}]")
        if not (self.s_base_mva > 0.0):
            raise ValueError(f"s_base_mva must be > 0, got {self.s_base_mva}")
        if not (self.v_base_kv > 0.0):
            raise ValueError(f"v_base_kv must be > 0, got {self.v_base_kv}")
        for node in self.inverters:
            if not (1 <= node <= self.n_nodes):
                raise ValueError(f"inverter at node {node} outside 1..{self.n_nodes}")

    @property
    def n_nodes(self) -> int:
        return len(self.lines)

    @property
    def r(self) -> np.ndarray:
        return np.array([ln.r for ln in self.lines])

    @property
    def x(self) -> np.ndarray:
        return np.array([ln.x for ln in self.lines])

    def s_max_vector(self) -> np.ndarray:
        """Per-node inverter ratings, zero where no inverter is installed."""
        s = np.zeros(self.n_nodes)
        for node, inv in self.inverters.items():
            s[node - 1] = inv.s_max
        return s

    def pv_nodes(self) -> list[int]:
        """1-based nodes that host an inverter, ascending."""
        return sorted(self.inverters)


def reduced_incidence(model: FeederModel) -> np.ndarray:
    """Reduced branch-bus incidence matrix A (N x N), substation column dropped.

    A[l, j] = +1 if line l sends from node j+1, -1 if it receives at
    node j+1.  For the chain this is lower bidiagonal and invertible.
    """
    n = model.n_nodes
    a = np.zeros((n, n))
    for line in range(n):
        # line `line` connects node `line` (sending) to node `line + 1` (receiving)
        if line >= 1:
            a[line, line - 1] = 1.0
        a[line, line] = -1.0
    return a


def sensitivity_matrices(model: FeederModel) -> tuple[np.ndarray, np.ndarray]:
    """Voltage sensitivity matrices R = F diag(r) F^T and X = F diag(x) F^T.

    F = A^{-1}.  Entry (j, k) is the total impedance on the overlap of
    the substation-to-j and substation-to-k paths, so both matrices are
    symmetric positive definite.
    """
    a = reduced_incidence(model)
    f = np.linalg.inv(a)
    rmat = f @ np.diag(model.r) @ f.T
    xmat = f @ np.diag(model.x) @ f.T
    return rmat, xmat


def feeder_from_dict(doc: dict) -> FeederModel:
    """Build a FeederModel from its JSON-document form.

    Expected shape::

        {"s_base_mva": 2.5, "v_base_kv": 4.8, "v_min": 0.95, "v_max": 1.05,
         "lines": [{"r": 0.01, "x": 0.0075}, ...],
         "inverters": {"6": {"s_max": 1.3}}}

    Inverter keys are 1-based node numbers as strings.
    """
    try:
        lines = tuple(LineSegment(r=float(ln["r"]), x=float(ln["x"])) for ln in doc["lines"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed feeder document: {exc}") from exc
    inverters = {}
    for key, inv in doc.get("inverters", {}).items():
        try:
            node = int(key)
        except ValueError as exc:
            raise ValueError(f"inverter node key {key!r} is not an integer") from exc
        inverters[node] = InverterSpec(s_max=float(inv["s_max"]))
    return FeederModel(
        lines=lines,
        inverters=inverters,
        s_base_mva=float(doc.get("s_base_mva", 2.5)),
        v_base_kv=float(doc.get("v_base_kv", 4.8)),
        v_min=float(doc.get("v_min", 0.95)),
        v_max=float(doc.get("v_max", 1.05)),
    )


def feeder_to_dict(model: FeederModel) -> dict:
    """Inverse of :func:`feeder_from_dict`."""
    return {
        "s_base_mva": model.s_base_mva,
        "v_base_kv": model.v_base_kv,
        "v_min": model.v_min,
        "v_max": model.v_max,
        "lines": [{"r": ln.r, "x": ln.x} for ln in model.lines],
        "inverters": {str(n): {"s_max": inv.s_max} for n, inv in sorted(model.inverters.items())},
    }


def feeder_from_json(path: str) -> FeederModel:
    with open(path) as fh:
        return feeder_from_dict(json.load(fh))
