from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

from gridvb.errors import ConfigError
from gridvb.io import _num, bus_index, feeder_from_dict, pu, read_json
from gridvb.network import FeederGraph, with_vbs
from gridvb.settings import Cadences, Settings, override
from gridvb.vb import VBParams

log = logging.getLogger(__name__)


class DisturbanceKind(str, Enum):
    STEP = "step"
    GAUSS_NOISE = "gauss_noise"
    VB_ATTACK = "vb_attack"


@dataclass(frozen=True, slots=True)
class Schedule:
    """Piecewise-constant signal: value of the last breakpoint at or before t."""

    times: tuple[float, ...] = (0.0,)
    values: tuple[float, ...] = (0.0,)

    def __post_init__(self) -> None:
        if len(self.times) != len(self.values) or not self.times:
            raise ConfigError("schedule needs matching, non-empty times and values")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError(f"schedule times must be nondecreasing, got {self.times}")

    def at(self, t: float) -> float:
        i = bisect.bisect_right(self.times, t) - 1
        return self.values[max(i, 0)]


@dataclass(frozen=True)
class FeederSpec:
    name: str
    graph: FeederGraph
    vbs: tuple[VBParams, ...]
    b0: tuple[float, ...]
    p_noise_buses: tuple[int, ...] = ()
    q_noise_buses: tuple[int, ...] = ()
    p0_econ_delta: Schedule = field(default_factory=Schedule)
    p_vb_econ: Schedule = field(default_factory=Schedule)

    @property
    def vb_bus(self) -> list[int]:
        return self.graph.vb_buses()


@dataclass(frozen=True, slots=True)
class Disturbance:
    kind: DisturbanceKind
    feeder: int
    start_s: float
    end_s: float = math.inf
    magnitude: float = 0.0
    sigma: float = 0.0
    sigma_q: float = 0.0
    corr_s: float = 0.0
    vbs: tuple[int, ...] | None = None
    direction: str = "min"

    def active(self, t: float) -> bool:
        return self.start_s <= t < self.end_s


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    feeders: tuple[FeederSpec, ...]
    dt_sim: float = 0.5
    t_end: float = 300.0
    cadences: Cadences = field(default_factory=Cadences)
    disturbances: tuple[Disturbance, ...] = ()
    rng_seed: int = 0
    settings: Settings = field(default_factory=Settings)
    p_ed: float = 0.0
    control: bool = True
    opf: bool = True

    def __post_init__(self) -> None:
        if self.dt_sim <= 0 or self.t_end <= 0:
            raise ConfigError("dt_sim_s and t_end_s must be positive")
        for name in ("opf_s", "pi_s", "retune_s", "adjust_s"):
            self.ticks(getattr(self.cadences, name), name)
        for d in self.disturbances:
            if not 0 <= d.feeder < len(self.feeders):
                raise ConfigError(f"disturbance targets unknown feeder {d.feeder}")
            if d.vbs is not None and any(not 0 <= j < len(self.feeders[d.feeder].vbs) for j in d.vbs):
                raise ConfigError(f"disturbance on feeder {d.feeder} names unknown VBs {list(d.vbs)}")

    def ticks(self, seconds: float, what: str = "cadence") -> int:
        n = seconds / self.dt_sim
        if n < 1 or abs(n - round(n)) > 1e-9:
            raise ConfigError(f"{what}={seconds} s is not a positive integer multiple of dt_sim={self.dt_sim} s")
        return int(round(n))

    @property
    def n_ticks(self) -> int:
        return int(round(self.t_end / self.dt_sim))

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, rng_seed=int(seed))


def _number(val: Any, where: str) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"Field {where} must be a number, got {val!r}")
    return float(val)


def _integer(val: Any, where: str) -> int:
    if isinstance(val, float) and val.is_integer():
        return int(val)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"Field {where} must be an integer, got {val!r}")
    return val


def _schedule(raw: Any, graph: FeederGraph, where: str) -> Schedule:
    """A number, or a list of [t, kW] breakpoints."""
    if raw is None:
        return Schedule()
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return Schedule((0.0,), (pu(graph, float(raw)),))
    if isinstance(raw, list) and raw and all(isinstance(p, list) and len(p) == 2 for p in raw):
        return Schedule(
            tuple(_number(t, f"{where}[{i}][0]") for i, (t, _) in enumerate(raw)),
            tuple(pu(graph, _number(v, f"{where}[{i}][1]")) for i, (_, v) in enumerate(raw)),
        )
    raise ConfigError(f"{where} must be a number or a list of [t, kW] pairs")


def _per_vb(raw: Any, count: int, where: str) -> list[float]:
    if isinstance(raw, list):
        if len(raw) != count:
            raise ConfigError(f"{where} has {len(raw)} entries for {count} VBs")
        return [_number(v, f"{where}[{i}]") for i, v in enumerate(raw)]
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return [float(raw)] * count
    raise ConfigError(f"{where} must be a number or a list")


def feeder_spec_from_dict(data: dict[str, Any], base: FeederGraph, where: str) -> FeederSpec:
    names = data.get("vb_buses", [])
    if not isinstance(names, list):
        raise ConfigError(f"{where}.vb_buses must be a list")
    m = len(names)
    buses = [bus_index(base, b, f"{where}.vb_buses") for b in names]
    placement = {bus: j for j, bus in enumerate(buses)}
    if len(placement) != m:
        raise ConfigError(f"{where}.vb_buses places two VBs on one bus")
    if "p_curtail_econ_kw" in data:
        log.warning("%s.p_curtail_econ_kw is accepted but curtailment is not modeled; ignoring it", where)
    name = str(data.get("name", where))
    graph = replace(with_vbs(base, placement), name=name)

    p_max = _per_vb(data.get("p_max_kw", 0.0), m, f"{where}.p_max_kw")
    energy = _per_vb(data.get("energy_kwh", 0.0), m, f"{where}.energy_kwh")
    tau = _per_vb(data.get("tau_s", 1.0), m, f"{where}.tau_s")
    delay = _per_vb(data.get("t_delay_s", 0.0), m, f"{where}.t_delay_s")
    b0_frac = _per_vb(data.get("b0_frac", 0.5), m, f"{where}.b0_frac")

    vbs = []
    b0 = []
    for j in range(m):
        params = VBParams.symmetric(pu(graph, p_max[j]), pu(graph, energy[j]), tau=tau[j], t_delay=delay[j])
        vbs.append(params)
        b0.append(params.b_min + b0_frac[j] * (params.b_max - params.b_min))

    return FeederSpec(
        name=name,
        graph=graph,
        vbs=tuple(vbs),
        b0=tuple(b0),
        p_noise_buses=tuple(bus_index(base, b, f"{where}.p_noise_buses") for b in data.get("p_noise_buses", [])),
        q_noise_buses=tuple(bus_index(base, b, f"{where}.q_noise_buses") for b in data.get("q_noise_buses", [])),
        p0_econ_delta=_schedule(data.get("p0_econ_delta_kw"), graph, f"{where}.p0_econ_delta_kw"),
        p_vb_econ=_schedule(data.get("p_vb_econ_kw"), graph, f"{where}.p_vb_econ_kw"),
    )


def _disturbance(raw: dict[str, Any], graph: FeederGraph, n_feeders: int, where: str) -> list[Disturbance]:
    try:
        kind = DisturbanceKind(raw.get("type"))
    except ValueError:
        raise ConfigError(f"{where}.type must be one of {[k.value for k in DisturbanceKind]}") from None
    target = raw.get("feeder", 0)
    feeders = range(n_feeders) if target == "all" else [_integer(target, f"{where}.feeder")]
    end = raw.get("end_s")
    sigma = pu(graph, _num(raw, "sigma_kw", where, 0.0))
    vbs = raw.get("vbs")
    direction = str(raw.get("direction", "min"))
    if direction not in ("min", "max"):
        raise ConfigError(f"{where}.direction must be min or max")
    return [
        Disturbance(
            kind=kind,
            feeder=f,
            start_s=_num(raw, "start_s", where, 0.0),
            end_s=math.inf if end is None else _number(end, f"{where}.end_s"),
            magnitude=pu(graph, _num(raw, "magnitude_kw", where, 0.0)),
            sigma=sigma,
            sigma_q=pu(graph, _num(raw, "sigma_kvar", where)) if "sigma_kvar" in raw else sigma,
            corr_s=_num(raw, "corr_s", where, 0.0),
            vbs=None if vbs is None else tuple(_integer(v, f"{where}.vbs[{i}]") for i, v in enumerate(vbs)),
            direction=direction,
        )
        for f in feeders
    ]


def scenario_from_dict(data: dict[str, Any], base_dir: Path = Path("."), name: str = "scenario") -> ScenarioConfig:
    """Scenario document -> ScenarioConfig. A `system` key names a file holding the feeder list."""
    data = dict(data)
    if "system" in data:
        system = read_json(base_dir / data["system"])
        for key, value in system.items():
            data.setdefault(key, value)

    raw_feeder = data.get("feeder")
    if isinstance(raw_feeder, str):
        base = feeder_from_dict(read_json(base_dir / raw_feeder), name=Path(raw_feeder).stem)
    elif isinstance(raw_feeder, dict):
        base = feeder_from_dict(raw_feeder)
    else:
        raise ConfigError("scenario.feeder must be a feeder file path or an inline feeder object\nSee docs/SCHEMAS.md")

    raw_feeders = data.get("feeders")
    if not isinstance(raw_feeders, list) or not raw_feeders:
        raise ConfigError("scenario.feeders must be a non-empty list\nSee docs/SCHEMAS.md")
    count = _integer(data.get("feeder_count", len(raw_feeders)), "scenario.feeder_count")
    feeders = tuple(
        feeder_spec_from_dict(f, base, f"scenario.feeders[{i}]") for i, f in enumerate(raw_feeders[:count])
    )

    settings = override(Settings.from_env(), data.get("settings"), "scenario.settings")
    cadences = override(settings.cadences, data.get("cadences"), "scenario.cadences")

    disturbances: list[Disturbance] = []
    for i, raw in enumerate(data.get("disturbances", [])):
        disturbances.extend(_disturbance(raw, base, len(feeders), f"scenario.disturbances[{i}]"))

    scenario = ScenarioConfig(
        name=str(data.get("name", name)),
        feeders=feeders,
        dt_sim=_num(data, "dt_sim_s", "scenario", 0.5),
        t_end=_num(data, "t_end_s", "scenario", 300.0),
        cadences=cadences,
        disturbances=tuple(disturbances),
        rng_seed=_integer(data.get("seed", 0), "scenario.seed"),
        settings=settings,
        p_ed=pu(base, _num(data, "dead_zone_kw", "scenario", 0.0)),
        control=bool(data.get("control", True)),
        opf=bool(data.get("opf", True)),
    )
    log.info(
        "scenario %s: %d feeders, %d disturbances, %.0f s at %.2f s",
        scenario.name,
        len(feeders),
        len(disturbances),
        scenario.t_end,
        scenario.dt_sim,
    )
    return scenario


def load_scenario(path: Path) -> ScenarioConfig:
    path = Path(path)
    return scenario_from_dict(read_json(path), base_dir=path.parent, name=path.stem)
