from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import line_feeder, random_feeder
from gridvb.errors import CycleDetected, DisconnectedBus, MultipleParents
from gridvb.network import Branch, Bus, FeederGraph, lindistflow, loss_sensitivities, validate_radial, with_vbs
from gridvb.powerflow import solve_ac

atol = 1e-12


def _graph(n: int, edges: list[tuple[int, int]]) -> FeederGraph:
    buses = tuple(Bus(i, 0.01, 0.0) for i in range(n))
    return FeederGraph(buses, tuple(Branch(a, b, 0.01, 0.01) for a, b in edges))


def test_line_topology():
    g = line_feeder(4)
    topo = g.topology
    assert list(topo.parent) == [-1, 0, 1, 2]
    assert topo.leaves == (3,)
    assert topo.path(3) == [3, 2, 1]
    assert topo.order[0] == 3
    expected = np.array([[0, 0, 0, 0], [0, 1, 0, 0], [0, 1, 1, 0], [0, 1, 1, 1]], dtype=float)
    assert_allclose(topo.path_matrix, expected)


def test_orientation_does_not_matter():
    a = _graph(3, [(1, 0), (2, 1)])
    b = _graph(3, [(0, 1), (1, 2)])
    assert list(a.topology.parent) == list(b.topology.parent)


def test_cycle_is_rejected():
    g = _graph(4, [(1, 0), (2, 1), (3, 2), (3, 1)])
    with pytest.raises(CycleDetected) as exc:
        validate_radial(g)
    assert len(exc.value.cycle) == 3


def test_disconnected_bus_is_reported():
    g = _graph(4, [(1, 0), (2, 1)])
    with pytest.raises(DisconnectedBus) as exc:
        validate_radial(g)
    assert exc.value.buses == [3]


def test_parallel_branch_is_rejected():
    g = _graph(3, [(1, 0), (2, 1), (2, 1)])
    with pytest.raises(MultipleParents) as exc:
        validate_radial(g)
    assert exc.value.branches == [1, 2]
    assert "Branches: [1, 2]" in str(exc.value)


def test_self_loop_is_rejected():
    g = _graph(2, [(1, 1)])
    with pytest.raises(CycleDetected):
        validate_radial(g)


def test_lindistflow_flows_are_subtree_sums(small_random):
    g = small_random
    s = g.nominal_injections()
    sol = lindistflow(g, s)
    topo = g.topology
    for i in range(1, g.n):
        below = [j for j in range(1, g.n) if i in topo.path(j)]
        assert sol.S_hat[i] == pytest.approx(s[below].sum(), abs=atol)
    assert sol.s0_hat == pytest.approx(-s[1:].sum(), abs=atol)


def test_lindistflow_upper_bounds_ac_voltage(small_random):
    g = small_random
    s = g.nominal_injections()
    s[0] = 0
    v_hat = lindistflow(g, s).v_hat
    v = solve_ac(g, s).v
    assert np.all(v <= v_hat + 1e-12)


def test_lindistflow_upper_bounds_ac_voltage_on_ieee37(ieee37):
    rng = np.random.default_rng(11)
    base = ieee37.nominal_injections()
    for _ in range(100):
        # scaled loads plus up to 20 kW of local generation per bus
        s = base * rng.uniform(0.0, 1.5, ieee37.n) + rng.uniform(0.0, 0.02, ieee37.n)
        s[0] = 0.0
        v_hat = lindistflow(ieee37, s).v_hat
        v = solve_ac(ieee37, s).v
        assert np.all(v <= v_hat + 1e-10)


def test_lindistflow_without_injection_is_flat():
    g = line_feeder(5, p_load=0.0, q_load=0.0)
    sol = lindistflow(g, np.zeros(5))
    assert_allclose(sol.v_hat, g.v0, atol=atol)
    assert_allclose(sol.S_hat, 0.0, atol=atol)


def test_loss_sensitivities_are_positive_for_loads():
    g = line_feeder(4)
    s = g.nominal_injections()
    zeta = loss_sensitivities(g, s)
    assert zeta[0] == 0.0
    # more injection at a loaded bus offsets flow and lowers losses
    assert np.all(zeta[1:] < 0)
    # the far end carries the longest path
    assert zeta[3] < zeta[2] < zeta[1]


def test_loss_sensitivities_vanish_without_resistance():
    g = line_feeder(3, r=0.0)
    assert_allclose(loss_sensitivities(g, g.nominal_injections()), 0.0)


def test_with_vbs_places_in_index_order():
    g = with_vbs(random_feeder(10, 4), {7: 1, 3: 0, 5: 2})
    assert g.vb_buses() == [3, 7, 5]
    with pytest.raises(ValueError):
        with_vbs(g, {0: 0})


def test_ieee37_fixture(ieee37):
    assert ieee37.n == 37
    assert len(ieee37.branches) == 36
    assert sum(b.p_load for b in ieee37.buses) * ieee37.s_base / 1e3 == pytest.approx(727.0)
    assert [ieee37.buses[i].name for i in ieee37.vb_buses()] == ["712", "722", "706", "703", "727", "708"]


def test_loss_linearization_error_is_second_order(ieee37):
    s = ieee37.nominal_injections()
    s[0] = 0.0
    zeta = loss_sensitivities(ieee37, s)
    L0 = solve_ac(ieee37, s).loss_total
    dp = np.random.default_rng(3).uniform(-0.01, 0.01, ieee37.n)
    dp[0] = 0.0

    def error(scale: float) -> float:
        return abs(solve_ac(ieee37, s + scale * dp).loss_total - (L0 + scale * (zeta @ dp)))

    assert error(1.0) / error(0.5) == pytest.approx(4.0, rel=0.1)
