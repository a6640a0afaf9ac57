from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from gridvb.errors import ConfigError, OracleDiverged, SolverFailed
from gridvb.io import feeder_from_dict, kw, read_json
from gridvb.opf.dispatch import operating_point_input, solve_opf
from gridvb.opf.formulation import P1, P2
from gridvb.powerflow import head_node_power, solve_ac
from gridvb.settings import OPFSettings, Settings, override
from gridvb.sim.scenario import FeederSpec, feeder_spec_from_dict
from gridvb.vb import step_reduced

log = logging.getLogger(__name__)

COLUMNS = ["step", "t_min", "reference_kw", "predicted_kw", "realized_kw", "soc_kwh", "residual", "failed"]


@dataclass(frozen=True)
class TrackingConfig:
    """Receding-horizon replay: re-solve every dt_min, apply the first step, advance."""

    name: str
    feeder: FeederSpec
    steps: int = 30
    formulations: tuple[str, ...] = (P1, P2)
    opf: OPFSettings = field(default_factory=OPFSettings)


@dataclass
class TrackingRun:
    formulation: str
    frame: pd.DataFrame

    @property
    def rms_error_kw(self) -> float:
        """RMS of realized minus reference head-node import over the solved steps."""
        ok = ~self.frame["failed"].to_numpy(bool)
        if not ok.any():
            return float("nan")
        gap = (self.frame["realized_kw"] - self.frame["reference_kw"]).to_numpy()[ok]
        return float(np.sqrt(np.mean(gap * gap)))

    @property
    def max_residual(self) -> float:
        return float(self.frame["residual"].max())


def tracking_from_dict(data: dict[str, Any], base_dir: Path = Path("."), name: str = "tracking") -> TrackingConfig:
    raw = data.get("feeder")
    if isinstance(raw, str):
        base = feeder_from_dict(read_json(base_dir / raw), name=Path(raw).stem)
    elif isinstance(raw, dict):
        base = feeder_from_dict(raw)
    else:
        raise ConfigError("experiment.feeder must be a feeder file path or an inline feeder object")
    spec = feeder_spec_from_dict(data, base, "experiment")
    if not spec.vbs:
        raise ConfigError("experiment.vb_buses must place at least one VB")
    formulations = tuple(str(f).lower() for f in data.get("formulations", [P1, P2]))
    for f in formulations:
        if f not in (P1, P2):
            raise ConfigError(f"experiment.formulations: unknown formulation {f!r}")
    settings = override(Settings.from_env(), data.get("settings"), "experiment.settings")
    steps = int(data.get("steps", 30))
    if steps < 1:
        raise ConfigError("experiment.steps must be positive")
    return TrackingConfig(
        name=str(data.get("name", name)),
        feeder=spec,
        steps=steps,
        formulations=formulations,
        opf=settings.opf,
    )


def load_tracking(path: Path) -> TrackingConfig:
    path = Path(path)
    return tracking_from_dict(read_json(path), base_dir=path.parent, name=path.stem)


def run_tracking(cfg: TrackingConfig, formulation: str = P2) -> TrackingRun:
    """Replay the dispatch on the AC oracle step by step.

    The reference schedule is read in seconds, the dispatch steps every dt_min minutes.
    """
    spec = cfg.feeder
    g = spec.graph
    opf = cfg.opf
    step_s = opf.dt_min * 60.0

    s_nom = g.nominal_injections()
    s_nom[0] = 0.0
    p_nominal = head_node_power(solve_ac(g, s_nom))

    b = np.array(spec.b0, dtype=float)
    p_b = np.zeros(len(spec.vbs))
    rows = []
    for k in range(cfg.steps):
        t0 = k * step_s
        ref = [p_nominal + spec.p0_econ_delta.at(t0 + h * step_s) for h in range(opf.horizon)]
        p_vb = [spec.p_vb_econ.at(t0 + h * step_s) for h in range(opf.horizon)]
        inp = operating_point_input(g, spec.vbs, b, p_b, ref, p_vb, opf)
        predicted = residual = np.nan
        failed = False
        try:
            sol = solve_opf(inp, opf, formulation)
            p_b = sol.setpoints
            predicted = float(sol.p0[0])
            residual = float(np.max(sol.residuals[0]))
        except SolverFailed as exc:
            log.warning("%s step %d: %s; holding previous setpoints", formulation, k, exc.status)
            failed = True

        s = s_nom.copy()
        for j, bus in enumerate(spec.vb_bus):
            s[bus] += p_b[j]
        try:
            realized = head_node_power(solve_ac(g, s))
        except OracleDiverged:
            realized = np.nan
            failed = True
        b = np.array([
            min(max(step_reduced(bj, pj, opf.dt_min), p.b_min), p.b_max) for bj, pj, p in zip(b, p_b, spec.vbs)
        ])
        rows.append((
            k,
            k * opf.dt_min,
            kw(g, ref[0]),
            kw(g, predicted),
            kw(g, realized),
            kw(g, float(b.sum())),
            residual,
            failed,
        ))
    frame = pd.DataFrame(rows, columns=COLUMNS)
    run = TrackingRun(formulation, frame)
    log.info(
        "tracking %s on %s: rms gap %.3f kW, max residual %.2e",
        formulation,
        g.name,
        run.rms_error_kw,
        run.max_residual,
    )
    return run


def run_experiment(cfg: TrackingConfig) -> dict[str, TrackingRun]:
    return {f: run_tracking(cfg, f) for f in cfg.formulations}
