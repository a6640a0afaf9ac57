from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import line_feeder
from gridvb.control import (
    FeederLoop,
    IntraGains,
    InterFeederModel,
    LinearFeederModel,
    PIGains,
    PIState,
    capacity_shares,
    dead_zone,
    design_intra_gains,
    design_pi_gains,
    h2_cost,
    intra_step,
    linearize_feeder,
    output_bounds,
    pi_step,
)
from gridvb.control.intra import bandwidth_cap, max_crossover
from gridvb.control.tuning import evaluate_pi
from gridvb.errors import UnstableClosedLoop
from gridvb.network import with_vbs
from gridvb.settings import ControlSettings
from gridvb.vb import VBParams

ROOT2 = math.sqrt(2.0) - 1.0


def test_scalar_h2_cost_closed_form():
    model = LinearFeederModel.scalar()
    for k in (0.0, 0.5, 2.0):
        assert h2_cost(model, [k], [1.0]) == pytest.approx((1 + k * k) / (2 * (1 + k)))


def test_h2_cost_matches_monte_carlo_variance():
    model = LinearFeederModel.from_sensitivities([-1.0], [1.0], noise_pole=1.0)
    k = np.array([-0.5])
    A = model.closed_loop(k)
    rng = np.random.default_rng(0)
    dt, paths = 0.01, 4000
    x = np.zeros((2, paths))
    samples = []
    for step in range(3000):
        x = x + dt * (A @ x) + np.sqrt(dt) * (model.B_w @ rng.standard_normal((1, paths)))
        if step >= 2000 and step % 10 == 0:
            samples.append((model.C @ x)[0])
    var_e = float(np.var(np.concatenate(samples)))
    assert h2_cost(model, k, [1.0]) == pytest.approx(var_e * (1 + 0.25), rel=0.05)


def test_two_vb_h2_cost_matches_monte_carlo_variance(two_vb_model):
    k = np.array([-0.4, -0.2])
    A = two_vb_model.closed_loop(k)
    rng = np.random.default_rng(1)
    # 10_000 paths sampled 100 times after burn-in: 10^6 samples
    dt, paths = 0.01, 10_000
    x = np.zeros((A.shape[0], paths))
    samples = []
    for step in range(3000):
        x = x + dt * (A @ x) + np.sqrt(dt) * (two_vb_model.B_w @ rng.standard_normal((1, paths)))
        if step >= 2000 and step % 10 == 0:
            samples.append((two_vb_model.C @ x)[0])
    e = np.concatenate(samples)
    assert e.size == 1_000_000
    var_e = float(np.var(e))
    expected = var_e * (1 + 0.4**2 + 0.2**2)
    assert h2_cost(two_vb_model, k, [1.0, 1.0]) == pytest.approx(expected, rel=0.05)


def test_h2_cost_rejects_unstable_gain():
    with pytest.raises(UnstableClosedLoop):
        h2_cost(LinearFeederModel.scalar(), [-2.0], [1.0])


def test_scalar_design_hits_optimum():
    gains = design_intra_gains(LinearFeederModel.scalar(), rho=[1.0])
    assert gains.k[0] == pytest.approx(ROOT2, abs=1e-4)
    assert gains.cost == pytest.approx(ROOT2, abs=1e-7)
    assert len(gains.starts) == 2


def test_two_vb_design_is_stable_and_shares_load(two_vb_model):
    gains = design_intra_gains(two_vb_model)
    assert np.all(gains.k < 0)
    assert gains.k.sum() < 1.0
    assert np.linalg.eigvals(two_vb_model.closed_loop(gains.k)).real.max() < 0
    # identical VBs get identical gains
    assert gains.k[0] == pytest.approx(gains.k[1], rel=1e-3)
    assert_allclose(gains.k_adj, [1.0, 1.0])


def test_delay_caps_the_crossover():
    model = LinearFeederModel.from_sensitivities([-1.0, -1.0], [1.0, 1.0], t_delay=[0.5, 0.5], p_max=[0.03, 0.03])
    gains = design_intra_gains(model)
    assert bandwidth_cap(0.5) == pytest.approx(0.4)
    assert max_crossover(model, gains.k) <= 0.4 * (1 + 1e-6)
    free = design_intra_gains(LinearFeederModel.from_sensitivities([-1.0, -1.0], [1.0, 1.0], p_max=[0.03, 0.03]))
    assert gains.cost >= free.cost - 1e-9


def test_design_beats_surrounding_grid():
    model = LinearFeederModel.from_sensitivities([-1.0, -1.0], [1.0, 1.5], p_max=[0.01, 0.03])
    gains = design_intra_gains(model)
    offsets = np.linspace(-0.05, 0.05, 11)
    for d0 in offsets:
        for d1 in offsets:
            k = gains.k + [d0, d1]
            try:
                cost = h2_cost(model, k, gains.rho)
            except UnstableClosedLoop:
                continue
            assert cost >= gains.cost - 1e-9


def test_larger_vb_takes_larger_gain():
    model = LinearFeederModel.from_sensitivities([-1.0, -1.0], [1.0, 1.0], p_max=[0.01, 0.04])
    gains = design_intra_gains(model)
    assert abs(gains.k[1]) > abs(gains.k[0])


def test_bandwidth_cap_without_delay():
    assert math.isinf(bandwidth_cap(0.0))


def test_intra_step_law():
    gains = IntraGains(k=np.array([-0.2, -0.4]), rho=np.ones(2))
    p_in = intra_step(0.10, 0.12, gains, [0.01, -0.01], k_adj=[1.0, 0.5])
    assert_allclose(p_in, [-0.2 * -0.02 + 0.01, -0.4 * 0.5 * -0.02 - 0.01])
    assert_allclose(intra_step(0.1, 0.1, gains, [0.0, 0.0]), [0.0, 0.0])


def test_intra_gains_validation():
    with pytest.raises(ValueError):
        IntraGains(k=np.array([math.nan]), rho=np.ones(1))
    with pytest.raises(ValueError):
        IntraGains(k=np.zeros(1), rho=np.zeros(1))


def test_linearized_sensitivity_includes_loss_relief():
    g = with_vbs(line_feeder(4), {3: 0, 1: 1})
    s = g.nominal_injections()
    s[0] = 0.0
    params = [VBParams.symmetric(0.03, 0.05)] * 2
    model = linearize_feeder(g, s, params)
    a = model.sensitivity
    # VB 0 sits deeper than VB 1
    assert -1.1 < a[0] < a[1] < -1.0
    assert model.t_delay.shape == (2,)


def test_dead_zone():
    assert dead_zone(0.5, 1.0) == 0.0
    assert dead_zone(-1.0, 1.0) == 0.0
    assert dead_zone(1.5, 1.0) == 1.5


def test_pi_is_quiet_inside_dead_zone():
    gains = PIGains(kp=-0.5, ki=-0.1, p_ed=0.02, kf=(0.5, 0.5))
    p_uf, state = pi_step(PIState(), 1.01, 1.0, gains, [0.4, 0.6])
    assert_allclose(p_uf, [0.4, 0.6])
    assert state == PIState()


def test_pi_velocity_form():
    gains = PIGains(kp=0.5, ki=0.1)
    _, s1 = pi_step(PIState(), 2.0, 1.0, gains, [0.0])
    assert s1.u_tilde == pytest.approx(0.5)
    p_uf, s2 = pi_step(s1, 2.0, 1.0, gains, [0.3])
    assert s2.u_tilde == pytest.approx(0.6)
    assert_allclose(p_uf, [0.9])


@pytest.mark.parametrize("kw, expected", [(1.0, 0.57), (0.0, 0.6)])
def test_pi_back_calculation(kw, expected):
    gains = PIGains(kp=0.5, ki=0.1, kw=kw, u_min=-0.2, u_max=0.2)
    p_uf, s1 = pi_step(PIState(), 2.0, 1.0, gains, [0.0])
    assert_allclose(p_uf, [0.2])
    _, s2 = pi_step(s1, 2.0, 1.0, gains, [0.0])
    assert s2.u_tilde == pytest.approx(expected)


def test_pi_gain_validation():
    with pytest.raises(ValueError):
        PIGains(kp=1.0, ki=1.0, kf=(0.5, 0.4))
    with pytest.raises(ValueError):
        PIGains(kp=1.0, ki=1.0, p_ed=-0.1)
    with pytest.raises(ValueError):
        PIGains(kp=1.0, ki=1.0, u_min=1.0, u_max=0.0)


def test_capacity_shares():
    a = [VBParams.symmetric(0.01, 0.1)]
    b = [VBParams.symmetric(0.01, 0.1), VBParams.symmetric(0.02, 0.1)]
    assert_allclose(capacity_shares([a, b]), [0.25, 0.75])
    with pytest.raises(ValueError):
        capacity_shares([[], []])


def test_output_bounds():
    vbs = [[VBParams.symmetric(0.03, 0.1)], [VBParams.symmetric(0.01, 0.1)]]
    lo, hi = output_bounds(vbs, [[0.01], [0.0]])
    assert lo == pytest.approx(-0.02 - 0.01)
    assert hi == pytest.approx(0.04 + 0.01)


def _one_feeder_model(sample_hold: bool = True) -> InterFeederModel:
    loop = FeederLoop(np.array([-1.0, -1.0]), np.ones(2), np.zeros(2), np.array([-0.3, -0.3]))
    return InterFeederModel((loop,), (1.0,), ts=5.0, sample_hold=sample_hold)


def test_closed_intra_loop_dc_gain():
    loop = _one_feeder_model().feeders[0]
    assert loop.closed().dc_gain() == pytest.approx(0.6 / 1.6)


def test_pi_design_meets_settling_target():
    cfg = ControlSettings(kp_points=12)
    gains, table = design_pi_gains(_one_feeder_model(), cfg, p_ed=0.01)
    assert len(table) == 3 * 12
    assert gains.kp < 0 and gains.ki < 0
    assert gains.p_ed == 0.01
    assert gains.kf == (1.0,)
    pm, settle = evaluate_pi(_one_feeder_model().plant(), gains.kp, gains.ki, 5.0, t_max=300.0)
    assert settle <= cfg.settling_target_s + 1.0
    assert pm > 0


def test_hold_delay_costs_phase():
    plant_hold = _one_feeder_model(True).plant()
    plant_free = _one_feeder_model(False).plant()
    pm_hold, _ = evaluate_pi(plant_hold, -0.3, -0.3, 5.0)
    pm_free, _ = evaluate_pi(plant_free, -0.3, -0.3, 5.0)
    assert pm_hold < pm_free
