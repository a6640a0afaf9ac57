from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest

from gridvb.errors import EmptyWindow
from gridvb.sim import TimeSeries, attack_recovery, error_stats, metrics


def _series(error: list[float], dt: float = 1.0, attacks: tuple[float, ...] = (), dead_zone: float = 1.0) -> TimeSeries:
    t = np.arange(len(error)) * dt
    frame = pd.DataFrame({"t": t, "error_kw": error})
    voltages = pd.DataFrame(
        {"t": [0.0] * 4, "feeder": [0, 0, 1, 1], "bus": ["0", "1", "0", "1"], "v_pu": [1.0, 0.97, 1.01, 0.96]}
    )
    events = [{"t": a, "kind": "attack_start"} for a in attacks]
    events.append({"t": 0.0, "kind": "retune", "wall_s": 0.25})
    return TimeSeries(frame, voltages, events, dead_zone_kw=dead_zone)


def test_error_stats_use_population_std():
    ts = _series([1.0, 3.0, 1.0, 3.0])
    assert error_stats(ts) == (2.0, 1.0)
    assert error_stats(ts, 2.0, 3.0) == (2.0, 1.0)
    assert error_stats(ts, 1.0, 1.0) == (3.0, 0.0)


def test_empty_window():
    with pytest.raises(EmptyWindow):
        error_stats(_series([0.0, 0.0]), 5.0, 6.0)


def test_recovery_needs_a_held_return():
    # out at 2, back at 4 for two samples, out again, back from 8 on
    err = [0, 0, 5, 5, 0, 0, 5, 5] + [0] * 12
    rec = attack_recovery(_series(err, attacks=(2.0,)), hold_s=10.0)
    assert rec[0].recovered_s == 8.0
    assert rec[0].time_to_recover == 6.0


def test_recovery_never_happens():
    rec = attack_recovery(_series([0, 0, 5, 5, 5, 5], attacks=(2.0,)), hold_s=2.0)
    assert rec[0].recovered_s is None
    assert rec[0].time_to_recover is None


def test_attack_absorbed_inside_dead_zone():
    rec = attack_recovery(_series([0, 0.5, 0.8, 0.2], attacks=(1.0,)))
    assert rec[0].time_to_recover == 0.0


def test_report():
    on = _series([1.0, -1.0, 1.0, -1.0])
    off = _series([4.0, -4.0, 4.0, -4.0])
    report = metrics(on, baseline=off)
    assert report.window == (0.0, 3.0)
    assert report.std_reduction == pytest.approx(0.75)
    assert report.v_min_pu == 0.96 and report.v_max_pu == 1.01
    assert report.retune_wall_s == (0.25,)
    d = report.to_dict()
    assert d["std_reduction"] == pytest.approx(0.75)
    assert d["window"] == [0.0, 3.0]


def test_report_without_baseline():
    report = metrics(_series([0.0, 0.0]))
    assert report.std_reduction is None
    assert math.isclose(report.error_std_kw, 0.0)
