from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import line_feeder
from gridvb.errors import NotConverged, OracleDiverged
from gridvb.network import FeederGraph
from gridvb.powerflow import head_node_power, solve_ac

atol = 1e-8


def newton_reference(g: FeederGraph, s: np.ndarray, tol: float = 1e-12, max_iter: int = 20) -> tuple[np.ndarray, complex]:
    """Newton-Raphson bus-injection power flow in polar form, slack at bus 0. Returns (|V|^2, slack power)."""
    n = g.n
    Y = np.zeros((n, n), dtype=complex)
    for br in g.branches:
        y = 1.0 / complex(br.r, br.x)
        Y[br.frm, br.frm] += y
        Y[br.to, br.to] += y
        Y[br.frm, br.to] -= y
        Y[br.to, br.frm] -= y
    pq = np.arange(1, n)
    Vm = np.full(n, np.sqrt(g.v0))
    Va = np.zeros(n)

    for _ in range(max_iter):
        V = Vm * np.exp(1j * Va)
        I = Y @ V
        d = (V * np.conj(I) - s)[pq]
        F = np.concatenate([d.real, d.imag])
        if np.max(np.abs(F)) < tol:
            break
        diagV = np.diag(V)
        diagVnorm = np.diag(V / np.abs(V))
        dS_dVm = diagV @ np.conj(Y @ diagVnorm) + np.conj(np.diag(I)) @ diagVnorm
        dS_dVa = 1j * diagV @ np.conj(np.diag(I) - Y @ diagV)
        block = np.ix_(pq, pq)
        J = np.block([
            [dS_dVa[block].real, dS_dVm[block].real],
            [dS_dVa[block].imag, dS_dVm[block].imag],
        ])
        dx = np.linalg.solve(J, -F)
        Va[pq] += dx[: n - 1]
        Vm[pq] += dx[n - 1:]
    else:
        pytest.fail(f"Newton reference did not converge: mismatch {np.max(np.abs(F)):.2e}")

    V = Vm * np.exp(1j * Va)
    return Vm**2, complex((V * np.conj(Y @ V))[0])


def test_sweep_matches_newton_reference(small_random):
    g = small_random
    s = g.nominal_injections()
    ac = solve_ac(g, s)
    v_ref, s0_ref = newton_reference(g, s)
    assert_allclose(ac.v, v_ref, atol=atol)
    assert ac.s0 == pytest.approx(s0_ref, abs=atol)


def test_sweep_matches_newton_reference_on_ieee37(ieee37):
    s = ieee37.nominal_injections()
    ac = solve_ac(ieee37, s)
    v_ref, s0_ref = newton_reference(ieee37, s)
    assert_allclose(ac.v, v_ref, atol=atol)
    assert ac.s0.real == pytest.approx(s0_ref.real, abs=atol)


def test_import_covers_load_and_losses(small_random):
    g = small_random
    ac = solve_ac(g, g.nominal_injections())
    load = sum(b.p_load for b in g.buses)
    assert head_node_power(ac) == pytest.approx(load + ac.loss_total, abs=1e-10)
    assert ac.residual < 1e-9


def test_unloaded_feeder_is_flat():
    g = line_feeder(5, p_load=0.0, q_load=0.0)
    ac = solve_ac(g, np.zeros(5))
    assert_allclose(ac.v, g.v0)
    assert ac.loss_total == 0.0
    assert ac.iterations == 1


def test_reverse_flow_gives_negative_import():
    g = line_feeder(4)
    s = np.full(4, 0.1 + 0.0j)
    ac = solve_ac(g, s)
    assert head_node_power(ac) < 0
    assert ac.voltages_pu().max() > 1.0


def test_iteration_cap_raises():
    g = line_feeder(6)
    with pytest.raises(NotConverged) as exc:
        solve_ac(g, g.nominal_injections(), max_iters=1)
    assert exc.value.iterations == 1


def test_overload_diverges():
    g = line_feeder(6, p_load=5.0, q_load=5.0, r=0.05, x=0.05)
    with pytest.raises(OracleDiverged):
        solve_ac(g, g.nominal_injections())


def test_head_node_injection_is_ignored(line4):
    s = line4.nominal_injections()
    a = solve_ac(line4, s)
    s[0] = 10.0
    b = solve_ac(line4, s)
    assert a.s0 == b.s0
