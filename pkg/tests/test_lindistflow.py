"""Linearized power-flow map: hand oracles, linearity, and flow sums."""

import numpy as np
import pytest

from feedermpc import (
    FeederModel,
    InjectionState,
    LineSegment,
    branch_flows,
    net_injections,
    sensitivity_matrices,
    total_flows,
    voltages,
)


def test_net_injections_by_hand():
    inj = net_injections([0.8], [0.3], [0.1], [0.0], [0.05])
    np.testing.assert_allclose(inj.p, [0.4], atol=1e-15)
    np.testing.assert_allclose(inj.q, [-0.05], atol=1e-15)


def test_net_injections_zero_and_bound_error():
    inj = net_injections([0.0], [0.0], [0.0], [0.0], [0.0])
    assert inj.p[0] == 0.0 and inj.q[0] == 0.0
    with pytest.raises(ValueError):
        net_injections([0.8], [0.9], [0.0], [0.0], [0.0])
    with pytest.raises(ValueError):
        net_injections([0.8], [-0.1], [0.0], [0.0], [0.0])
    with pytest.raises(ValueError):
        net_injections([0.8, 0.8], [0.0], [0.0], [0.0], [0.0])


def test_single_node_voltage_oracle():
    # v = 1 + 0.08 * 0.5 with zero reactive injection
    rmat = np.array([[0.08]])
    xmat = np.array([[0.06]])
    v = voltages(rmat, xmat, InjectionState(p=[0.5], q=[0.0]), 1.0)
    assert v[0] == pytest.approx(1.04, abs=1e-15)


def test_zero_injection_identity_and_v0_validation():
    model = FeederModel(lines=(LineSegment(r=0.02, x=0.01),) * 4)
    rmat, xmat = sensitivity_matrices(model)
    v = voltages(rmat, xmat, InjectionState(p=np.zeros(4), q=np.zeros(4)), 1.01)
    np.testing.assert_allclose(v, 1.01, atol=1e-15)
    with pytest.raises(ValueError):
        voltages(rmat, xmat, InjectionState(p=np.zeros(4), q=np.zeros(4)), 0.0)


def test_two_node_voltage_matrix_oracle():
    model = FeederModel(lines=(LineSegment(r=0.04, x=0.03), LineSegment(r=0.03, x=0.02)))
    rmat, xmat = sensitivity_matrices(model)
    v = voltages(rmat, xmat, InjectionState(p=[0.0, 0.5], q=[0.0, 0.0]), 1.0)
    np.testing.assert_allclose(v, [1.0 + 0.5 * rmat[0, 1], 1.0 + 0.5 * rmat[1, 1]], atol=1e-14)


def test_linearity_property():
    rng = np.random.default_rng(23)
    model = FeederModel(
        lines=tuple(LineSegment(r=r, x=x) for r, x in rng.uniform(0.001, 0.1, (5, 2)))
    )
    rmat, xmat = sensitivity_matrices(model)
    for _ in range(20):
        a, b = rng.uniform(-3, 3, 2)
        i1 = InjectionState(p=rng.normal(size=5), q=rng.normal(size=5))
        i2 = InjectionState(p=rng.normal(size=5), q=rng.normal(size=5))
        mixed = InjectionState(p=a * i1.p + b * i2.p, q=a * i1.q + b * i2.q)
        lhs = voltages(rmat, xmat, mixed, 1.0) - 1.0
        rhs = a * (voltages(rmat, xmat, i1, 1.0) - 1.0) + b * (
            voltages(rmat, xmat, i2, 1.0) - 1.0
        )
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_total_flows():
    assert total_flows(InjectionState(p=[0.2, -0.1], q=[0.0, 0.05])) == (
        pytest.approx(0.1),
        pytest.approx(0.05),
    )
    assert total_flows(InjectionState(p=[0.0], q=[0.0])) == (0.0, 0.0)
    assert total_flows(InjectionState(p=[1.0], q=[0.0]))[0] == pytest.approx(1.0)


def test_branch_flows_downstream_sum_oracle():
    # positive branch flow points away from the substation, so a line
    # carries minus the sum of net injections strictly downstream of it
    rng = np.random.default_rng(31)
    model = FeederModel(
        lines=tuple(LineSegment(r=r, x=x) for r, x in rng.uniform(0.001, 0.1, (6, 2)))
    )
    inj = InjectionState(p=rng.normal(size=6), q=rng.normal(size=6))
    p_fl, q_fl = branch_flows(model, inj)
    for line in range(6):
        assert p_fl[line] == pytest.approx(-np.sum(inj.p[line:]), abs=1e-12)
        assert q_fl[line] == pytest.approx(-np.sum(inj.q[line:]), abs=1e-12)
