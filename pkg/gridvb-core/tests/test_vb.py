from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gridvb.errors import ConfigError
from gridvb.vb import VBParams, VBState, adjustment_factor, step_continuous, step_reduced, with_output

DT = 0.5


def _params(**kw) -> VBParams:
    base = dict(p_max=0.0242, energy=0.097, tau=1.0, t_delay=0.0)
    base.update(kw)
    return VBParams.symmetric(base.pop("p_max"), base.pop("energy"), **base)


def _run(params: VBParams, inputs, b0: float | None = None, dt: float = DT) -> list[VBState]:
    state = VBState.initial(params, params.b_max / 2 if b0 is None else b0, dt)
    out = []
    for p in inputs:
        state = step_continuous(state, p, dt, params)
        out.append(state)
    return out


def test_first_order_lag_is_exact():
    p = _params(tau=1.0)
    states = _run(p, [0.01] * 10, dt=0.1)
    decay = math.exp(-0.1)
    expected = 0.01 * (1 - decay ** np.arange(1, 11))
    assert_allclose([s.p_b for s in states], expected, rtol=1e-12)


def test_delay_shifts_the_response():
    fast = _run(_params(t_delay=0.0), [0.01, 0, 0, 0, 0])
    slow = _run(_params(t_delay=0.8), [0.01, 0, 0, 0, 0])
    assert _params(t_delay=0.8).delay_samples(DT) == 2
    assert slow[0].p_b == slow[1].p_b == 0.0
    assert slow[2].p_b == pytest.approx(fast[0].p_b)


def test_delay_rounds_half_up():
    assert _params(t_delay=0.25).delay_samples(DT) == 1
    assert _params(t_delay=0.2).delay_samples(DT) == 0


def test_input_is_clamped_to_power_limits():
    p = _params()
    states = _run(p, [1.0] * 200)
    assert states[-1].p_b == pytest.approx(p.p_max, rel=1e-9)
    assert p.clamp(-5.0) == p.p_min


def test_discharging_lowers_energy():
    p = _params()
    states = _run(p, [p.p_max] * 20)
    b = [s.b for s in states]
    assert all(x > y for x, y in zip(b, b[1:]))
    used = sum(s.p_b for s in states) * DT / 3600.0
    assert b[-1] == pytest.approx(p.b_max / 2 - used)


def test_empty_battery_cannot_discharge():
    p = _params()
    state = VBState(b=p.b_min, p_b=p.p_max)
    nxt = step_continuous(state, p.p_max, DT, p)
    assert nxt.b == p.b_min
    assert nxt.p_b <= 0.0
    assert nxt.saturated


def test_full_battery_cannot_charge():
    p = _params()
    state = VBState(b=p.b_max, p_b=p.p_min)
    nxt = step_continuous(state, p.p_min, DT, p)
    assert nxt.b == p.b_max
    assert nxt.p_b >= 0.0


def test_dissipation_drains_idle_battery():
    p = _params(alpha_b=1e-3)
    states = _run(p, [0.0] * 10)
    assert states[-1].b < p.b_max / 2


def test_reduced_model_is_minute_euler():
    assert step_reduced(0.05, 0.012, 1.0) == pytest.approx(0.05 - 0.012 / 60.0)
    with pytest.raises(ValueError):
        step_reduced(0.05, 0.0, 0.0)


@pytest.mark.parametrize(
    "kw",
    [
        dict(tau=0.0),
        dict(t_delay=-0.1),
        dict(w_exp=1.0),
    ],
)
def test_invalid_parameters(kw):
    with pytest.raises(ConfigError):
        _params(**kw)


def test_power_bounds_must_straddle_zero():
    with pytest.raises(ConfigError):
        VBParams(p_min=0.01, p_max=0.02, b_min=0.0, b_max=0.1)


def test_adjustment_factor_cases():
    p = _params()
    span = p.b_max - p.b_min
    mid = VBState(b=p.b_min + 0.5 * span, p_b=p.p_min)
    assert adjustment_factor(mid, p) == 1.0

    low = p.b_min + 0.05 * span
    assert adjustment_factor(VBState(b=low, p_b=-0.001), p) == pytest.approx(0.25)
    assert adjustment_factor(VBState(b=low, p_b=0.001), p) == 1.0

    high = p.b_max - 0.05 * span
    assert adjustment_factor(VBState(b=high, p_b=0.001), p) == pytest.approx(0.25)
    assert adjustment_factor(VBState(b=high, p_b=-0.001), p) == 1.0

    assert adjustment_factor(VBState(b=p.b_min, p_b=-0.001), p) == 0.0


def test_adjustment_factor_is_continuous_at_thresholds():
    p = _params()
    eps = 1e-9
    assert adjustment_factor(VBState(b=p.b_low_thresh - eps, p_b=-1e-3), p) == pytest.approx(1.0, abs=1e-6)
    assert adjustment_factor(VBState(b=p.b_high_thresh + eps, p_b=1e-3), p) == pytest.approx(1.0, abs=1e-6)


def test_with_output_refills_delay_line():
    p = _params(t_delay=1.0)
    state = with_output(VBState.initial(p, 0.05, DT), 0.01)
    assert state.p_b == 0.01
    assert state.delay_line == (0.01, 0.01)
