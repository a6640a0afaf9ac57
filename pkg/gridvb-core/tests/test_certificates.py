from __future__ import annotations

import numpy as np
import pytest

from conftest import line_feeder, line_opf_input, nominal_import
from gridvb.network import lindistflow
from gridvb.opf import P2, certify, check_c1, check_c2, c2_sweep, operating_point_input, solve_opf
from gridvb.settings import OPFSettings
from gridvb.vb import VBParams

FEEDER1_VBS = ["712", "722", "706", "703", "727", "708"]


def test_c1_holds_for_light_injections():
    g = line_feeder(4)
    res = check_c1(g, [0.0, 0.03, 0.03, 0.03], [0.0, 0.0, 0.0, 0.0])
    assert res.holds
    assert res.min_entry > 0
    assert res.leaf == 3


def test_c1_fails_for_huge_reverse_flow():
    g = line_feeder(4)
    res = check_c1(g, [0.0, 100.0, 100.0, 100.0], [0.0, 0.0, 0.0, 0.0])
    assert not res.holds
    assert res.min_entry < 0
    assert 1 <= res.s <= res.t <= len(res.path)


def test_c1_with_zero_caps_reduces_to_line_parameters():
    g = line_feeder(4)
    # zero flow bounds leave every A_low at the identity
    res = check_c1(g, [0.0] * 4, [0.0] * 4)
    assert res.min_entry == pytest.approx(0.01)


def test_c2_on_solution():
    inp = line_opf_input(offset=-0.01)
    sol = solve_opf(inp, OPFSettings(alpha=0.01), P2)
    res = check_c2(inp.graph, sol)
    assert res.holds
    assert res.margin > 0
    v_hat = lindistflow(inp.graph, sol.p_inj[res.step] + 1j * sol.q_inj[res.step]).v_hat
    assert res.max_v_hat == pytest.approx(v_hat[res.bus])


def test_certify_report():
    inp = line_opf_input(offset=-0.01)
    sol = solve_opf(inp, OPFSettings(alpha=0.01), P2)
    report = certify(inp, sol)
    assert report.c1_holds and report.c2_holds and report.exact
    d = report.to_dict()
    assert d["exact"] is True
    assert set(d["c1_witness"]) == {"leaf", "path", "s", "t"}


def test_augmented_program_keeps_linear_voltages_below_cap():
    inp = line_opf_input(offset=-0.02, augment_c2=True)
    sol = solve_opf(inp, OPFSettings(alpha=0.01), P2)
    assert check_c2(inp.graph, sol).holds


def test_sweep_rises_with_injection(line4):
    rows = c2_sweep(line4, [3], np.arange(0.0, 3.0, 0.5))
    v = [r.max_v_hat for r in rows]
    assert all(b > a for a, b in zip(v, v[1:]))
    assert rows[0].c2_holds
    assert rows[0].injection_pu == 0.0


def test_sweep_needs_vb_buses(line4):
    with pytest.raises(ValueError):
        c2_sweep(line4, [], [1.0])


@pytest.mark.slow
def test_sweep_boundary_on_ieee37(ieee37):
    vb = [ieee37.by_name(b) for b in FEEDER1_VBS]
    rows = c2_sweep(ieee37, vb, np.round(np.arange(0.0, 8.0, 0.1), 10))
    assert rows[0].c2_holds
    first_fail = next(r.multiple for r in rows if not r.c2_holds)
    # C2 holds up to a few times the feeder demand
    assert 2.5 <= first_fail <= 6.0
    assert all(not r.c2_holds for r in rows if r.multiple >= first_fail)


@pytest.mark.slow
def test_certified_dispatch_is_exact_on_randomized_ieee37(ieee37):
    rng = np.random.default_rng(37)
    horizon = 2
    settings = OPFSettings(horizon=horizon, alpha=0.01, accept_tol=1e-4)
    vbs = [VBParams.symmetric(0.0242, 0.097) for _ in ieee37.vb_buses()]
    nominal = nominal_import(ieee37)
    p_nom = np.array([b.p_load for b in ieee37.buses])
    q_nom = np.array([b.q_load for b in ieee37.buses])

    certified = 0
    for _ in range(50):
        scale = rng.uniform(0.7, 1.3, (ieee37.n, horizon))
        ref = nominal + rng.uniform(-0.08, 0.08, horizon)
        inp = operating_point_input(
            ieee37, vbs, [0.0485] * len(vbs), [0.0] * len(vbs), ref, [0.0] * horizon, settings,
            p_load=p_nom[:, None] * scale, q_load=q_nom[:, None] * scale,
        )
        report = certify(inp, solve_opf(inp, settings, P2))
        if report.c1_holds and report.c2_holds:
            certified += 1
            assert report.max_residual <= 1e-6
    assert certified >= 40
