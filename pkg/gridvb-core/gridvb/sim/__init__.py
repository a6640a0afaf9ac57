from __future__ import annotations

from gridvb.sim.loop import TimeSeries, run_closed_loop, run_with_counterfactual
from gridvb.sim.metrics import MetricsReport, Recovery, attack_recovery, error_stats, metrics
from gridvb.sim.scenario import (
    Disturbance,
    DisturbanceKind,
    FeederSpec,
    ScenarioConfig,
    Schedule,
    load_scenario,
    scenario_from_dict,
)
from gridvb.sim.tracking import TrackingConfig, TrackingRun, load_tracking, run_experiment, run_tracking

__all__ = [
    "Disturbance",
    "DisturbanceKind",
    "FeederSpec",
    "MetricsReport",
    "Recovery",
    "ScenarioConfig",
    "Schedule",
    "TimeSeries",
    "TrackingConfig",
    "TrackingRun",
    "attack_recovery",
    "error_stats",
    "load_scenario",
    "load_tracking",
    "metrics",
    "run_closed_loop",
    "run_experiment",
    "run_tracking",
    "run_with_counterfactual",
    "scenario_from_dict",
]
