from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, TypeVar

import numpy as np
import pandas as pd

from gridvb.control.inter import PIGains, PIState, capacity_shares, output_bounds, pi_step, with_bounds
from gridvb.control.intra import IntraGains, design_intra_gains, intra_step
from gridvb.control.model import linearize_feeder
from gridvb.control.tuning import FeederLoop, InterFeederModel, design_pi_gains
from gridvb.errors import GridVBError, OracleDiverged
from gridvb.io import kw
from gridvb.network import with_vbs
from gridvb.opf.dispatch import dispatch_round, operating_point_input
from gridvb.powerflow import ACSolution, head_node_power, solve_ac
from gridvb.sim.scenario import DisturbanceKind, FeederSpec, ScenarioConfig
from gridvb.vb import VBState, adjustment_factor, step_continuous

log = logging.getLogger(__name__)

T = TypeVar("T")
VOLTAGE_COLUMNS = ["t", "feeder", "bus", "v_pu"]


@dataclass
class TimeSeries:
    """Per-tick records in kW / kWh, per-bus voltages at OPF instants (long format), and the event log."""

    frame: pd.DataFrame
    voltages: pd.DataFrame
    events: list[dict[str, Any]]
    dead_zone_kw: float = 0.0
    controlled: bool = True

    def voltage_range(self) -> pd.DataFrame:
        """Per (t, feeder) minimum and maximum bus voltage."""
        grouped = self.voltages.groupby(["t", "feeder"], sort=True)["v_pu"]
        return grouped.agg(v_min_pu="min", v_max_pu="max").reset_index()

    def attack_starts(self) -> list[float]:
        return sorted({e["t"] for e in self.events if e["kind"] == "attack_start"})

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        self.frame.to_csv(path, index=False, float_format="%.9g")
        return path


@dataclass
class _Feeder:
    """Mutable per-feeder runtime. Each instance is touched by one worker at a time."""

    spec: FeederSpec
    states: list[VBState]
    p_set: np.ndarray
    gains: IntraGains
    p_nominal: float
    p_h: float
    ac: ACSolution
    p_uf: float = 0.0
    p_in: np.ndarray = field(default_factory=lambda: np.zeros(0))
    k_adj: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step_p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sensitivity: np.ndarray | None = None
    noise_p: dict[int, np.ndarray] = field(default_factory=dict)
    noise_q: dict[int, np.ndarray] = field(default_factory=dict)

    def p_econ(self, t: float) -> float:
        return self.p_nominal + self.spec.p0_econ_delta.at(t)

    def injections(self, extra_p: np.ndarray, extra_q: np.ndarray) -> np.ndarray:
        s = self.spec.graph.nominal_injections() - extra_p - 1j * extra_q
        for j, bus in enumerate(self.spec.vb_bus):
            s[bus] += self.states[j].p_b
        s[0] = 0.0
        return s


def _map(pool: ThreadPoolExecutor | None, fn: Callable[[T], Any], items: Iterable[T]) -> list[Any]:
    if pool is None:
        return [fn(x) for x in items]
    return list(pool.map(fn, items))


def _init_feeder(spec: FeederSpec, dt: float) -> _Feeder:
    m = len(spec.vbs)
    states = [VBState.initial(p, b, dt) for p, b in zip(spec.vbs, spec.b0)]
    n = spec.graph.n
    s = spec.graph.nominal_injections()
    s[0] = 0.0
    ac = solve_ac(spec.graph, s)
    p_h = head_node_power(ac)
    return _Feeder(
        spec=spec,
        states=states,
        p_set=np.zeros(m),
        gains=IntraGains.zero(m),
        p_nominal=p_h,
        p_h=p_h,
        ac=ac,
        p_uf=p_h,
        p_in=np.zeros(m),
        k_adj=np.ones(m),
        step_p=np.zeros(n),
    )


class ClosedLoop:
    """Multi-rate simulation of dispatcher, intra-feeder and inter-feeder layers.

    Responsibilities:
      - advance VB plants and the AC oracle every tick
      - run PI, dispatch and retune layers on their cadences
      - inject disturbances and attacks deterministically from the scenario seed
      - record the time series and an event log
    """

    def __init__(self, scenario: ScenarioConfig, control: bool | None = None) -> None:
        self.scenario = scenario
        self.control = scenario.control if control is None else control
        self.rng = np.random.default_rng(scenario.rng_seed)
        self.dt = scenario.dt_sim
        self.feeders = [_init_feeder(f, self.dt) for f in scenario.feeders]
        self.pi_state = PIState()
        self.pi_gains: PIGains | None = None
        self.u = 0.0
        self.events: list[dict[str, Any]] = []
        self.rows: list[dict[str, float]] = []
        self.volts: list[dict[str, float]] = []
        self._started: set[int] = set()

    # events

    def _event(self, t: float, kind: str, **detail: Any) -> None:
        self.events.append({"t": round(t, 9), "kind": kind, **detail})

    # disturbances

    def _disturb(self, t: float) -> tuple[list[np.ndarray], list[np.ndarray], list[dict[int, float]]]:
        """Extra load per feeder (p, q) and forced VB powers, drawn in a fixed order."""
        n_buses = [f.spec.graph.n for f in self.feeders]
        extra_p = [np.zeros(n) for n in n_buses]
        extra_q = [np.zeros(n) for n in n_buses]
        forced: list[dict[int, float]] = [{} for _ in self.feeders]
        for fd in self.feeders:
            fd.step_p = np.zeros(fd.spec.graph.n)

        for k, d in enumerate(self.scenario.disturbances):
            fd = self.feeders[d.feeder]
            spec = fd.spec
            if not d.active(t):
                fd.noise_p.pop(k, None)
                fd.noise_q.pop(k, None)
                continue

            if d.kind is DisturbanceKind.STEP:
                for bus in spec.p_noise_buses:
                    extra_p[d.feeder][bus] += d.magnitude
                    fd.step_p[bus] += d.magnitude
                if k not in self._started:
                    self._started.add(k)
                    self._event(t, "step_start", feeder=d.feeder, magnitude_kw=kw(spec.graph, d.magnitude))
                    log.info("step disturbance on %s at %.1f s", spec.name, t)

            elif d.kind is DisturbanceKind.GAUSS_NOISE:
                np_, nq = len(spec.p_noise_buses), len(spec.q_noise_buses)
                if k not in fd.noise_p:
                    fd.noise_p[k] = d.sigma * self.rng.standard_normal(np_)
                    fd.noise_q[k] = d.sigma_q * self.rng.standard_normal(nq)
                    self._event(t, "noise_start", feeder=d.feeder, sigma_kw=kw(spec.graph, d.sigma))
                    log.info("noise on %s from %.1f s", spec.name, t)
                else:
                    # Ornstein-Uhlenbeck with stationary std sigma; white when corr_s is 0
                    a = math.exp(-self.dt / d.corr_s) if d.corr_s > 0 else 0.0
                    b = math.sqrt(1.0 - a * a)
                    fd.noise_p[k] = a * fd.noise_p[k] + b * d.sigma * self.rng.standard_normal(np_)
                    fd.noise_q[k] = a * fd.noise_q[k] + b * d.sigma_q * self.rng.standard_normal(nq)
                for bus, val in zip(spec.p_noise_buses, fd.noise_p[k]):
                    extra_p[d.feeder][bus] += val
                for bus, val in zip(spec.q_noise_buses, fd.noise_q[k]):
                    extra_q[d.feeder][bus] += val

            elif d.kind is DisturbanceKind.VB_ATTACK:
                targets = range(len(spec.vbs)) if d.vbs is None else d.vbs
                for j in targets:
                    params = spec.vbs[j]
                    forced[d.feeder][j] = params.p_min if d.direction == "min" else params.p_max
                if k not in self._started:
                    self._started.add(k)
                    self._event(t, "attack_start", feeder=d.feeder, vbs=list(targets), direction=d.direction)
                    log.info("VB attack on %s at %.1f s", spec.name, t)
        return extra_p, extra_q, forced

    # slow layers

    def _dispatch(self, t: float, fd: _Feeder, forced: dict[int, float]) -> dict[str, Any]:
        spec = fd.spec
        cfg = self.scenario.settings.opf
        free = [j for j in range(len(spec.vbs)) if j not in forced]
        if not free:
            return {"feeder": spec.name, "skipped": "all VBs forced"}
        vb_bus = spec.vb_bus
        graph = with_vbs(spec.graph, {vb_bus[j]: i for i, j in enumerate(free)})
        horizon = cfg.horizon
        step_s = cfg.dt_min * 60.0
        # forecasts see steps, not noise
        p_load = np.array([b.p_load for b in graph.buses]) + fd.step_p
        q_load = np.array([b.q_load for b in graph.buses])
        p_solar = np.array([b.p_solar for b in graph.buses])
        for j in forced:
            p_solar[vb_bus[j]] += fd.states[j].p_b

        p0_econ = [fd.p_econ(t + k * step_s) for k in range(horizon)]
        p_vb_econ = [spec.p_vb_econ.at(t + k * step_s) for k in range(horizon)]
        inp = operating_point_input(
            graph,
            [spec.vbs[j] for j in free],
            [fd.states[j].b for j in free],
            [fd.states[j].p_b for j in free],
            p0_econ,
            p_vb_econ,
            cfg,
            p_load=np.repeat(p_load[:, None], horizon, axis=1),
            q_load=np.repeat(q_load[:, None], horizon, axis=1),
            p_solar=np.repeat(p_solar[:, None], horizon, axis=1),
        )
        result = dispatch_round(inp, cfg, previous_setpoints=fd.p_set[free])
        p_set = fd.p_set.copy()
        p_set[free] = result.setpoints
        fd.p_set = p_set
        out: dict[str, Any] = {"feeder": spec.name, "degraded": result.degraded, "status": result.status}
        if result.report is not None:
            out.update(c1=result.report.c1_holds, c2=result.report.c2_holds, residual=result.report.max_residual)
        return out

    def _retune_intra(self, fd: _Feeder) -> dict[str, Any]:
        spec = fd.spec
        if not spec.vbs:
            return {"feeder": spec.name, "skipped": "no VBs"}
        cfg = self.scenario.settings.control
        zeros = np.zeros(spec.graph.n)
        model = linearize_feeder(spec.graph, fd.injections(zeros, zeros), spec.vbs, cfg.noise_pole, cfg.fd_step)
        fd.gains = design_intra_gains(model, t_delay_max=max(p.t_delay for p in spec.vbs))
        fd.sensitivity = model.sensitivity
        return {"feeder": spec.name, "k": [float(k) for k in fd.gains.k]}

    def _retune_pi(self) -> None:
        cfg = self.scenario.settings.control
        usable = [f for f in self.feeders if f.spec.vbs and f.sensitivity is not None]
        loops = tuple(
            FeederLoop(
                f.sensitivity,
                np.array([p.tau for p in f.spec.vbs]),
                np.array([p.t_delay for p in f.spec.vbs]),
                f.gains.k,
            )
            for f in usable
        )
        kf = capacity_shares([f.spec.vbs for f in usable])
        model = InterFeederModel(loops, kf, ts=self.scenario.cadences.pi_s, sample_hold=cfg.sample_hold)
        lo, hi = output_bounds([f.spec.vbs for f in self.feeders], [f.p_set for f in self.feeders])
        gains, _ = design_pi_gains(model, cfg, p_ed=self.scenario.p_ed, u_min=lo, u_max=hi)
        if len(usable) != len(self.feeders):
            shares = iter(gains.kf)
            full = tuple(next(shares) if (f.spec.vbs and f.sensitivity is not None) else 0.0 for f in self.feeders)
            gains = replace(gains, kf=full)
        self.pi_gains = gains

    def _retune(self, t: float, pool: ThreadPoolExecutor | None) -> None:
        t0 = time.perf_counter()

        def safe(fd: _Feeder) -> dict[str, Any]:
            try:
                return self._retune_intra(fd)
            except GridVBError as exc:
                return {"feeder": fd.spec.name, "error": str(exc).splitlines()[0]}

        results = _map(pool, safe, self.feeders)
        try:
            self._retune_pi()
            pi = {"kp": self.pi_gains.kp, "ki": self.pi_gains.ki}
        except GridVBError as exc:
            pi = {"error": str(exc).splitlines()[0]}
        wall = time.perf_counter() - t0
        self._event(t, "retune", wall_s=round(wall, 3), feeders=results, pi=pi)
        log.info("retune at %.1f s took %.2f s", t, wall)

    # fast layer

    def _advance(self, fd: _Feeder, extra_p: np.ndarray, extra_q: np.ndarray, forced: dict[int, float]) -> str | None:
        spec = fd.spec
        gains = fd.gains if self.control else IntraGains.zero(len(spec.vbs))
        p_in = intra_step(fd.p_uf, fd.p_h, gains, fd.p_set, fd.k_adj) if spec.vbs else np.zeros(0)
        for j, p in forced.items():
            p_in[j] = p
        fd.p_in = p_in
        fd.states = [step_continuous(s, float(p), self.dt, params) for s, p, params in zip(fd.states, p_in, spec.vbs)]
        try:
            fd.ac = solve_ac(spec.graph, fd.injections(extra_p, extra_q))
        except OracleDiverged as exc:
            return str(exc).splitlines()[0]
        fd.p_h = head_node_power(fd.ac)
        return None

    def _record(self, t: float) -> None:
        g = self.feeders[0].spec.graph
        p_h_net = sum(f.p_h for f in self.feeders)
        p_econ_net = sum(f.p_econ(t) for f in self.feeders)
        row: dict[str, float] = {
            "t": t,
            "p_h_net_kw": kw(g, p_h_net),
            "p_econ_net_kw": kw(g, p_econ_net),
            "error_kw": kw(g, p_h_net - p_econ_net),
            "e_tilde_kw": kw(g, self.pi_state.e_prev),
            "u_tilde_kw": kw(g, self.pi_state.u_tilde),
            "u_kw": kw(g, self.u),
        }
        for i, f in enumerate(self.feeders):
            row[f"f{i}_p_h_kw"] = kw(g, f.p_h)
            row[f"f{i}_p_uf_kw"] = kw(g, f.p_uf)
            row[f"f{i}_p_econ_kw"] = kw(g, f.p_econ(t))
            for j, s in enumerate(f.states):
                row[f"f{i}_vb{j}_p_in_kw"] = kw(g, float(f.p_in[j]))
                row[f"f{i}_vb{j}_p_b_kw"] = kw(g, s.p_b)
                row[f"f{i}_vb{j}_b_kwh"] = kw(g, s.b)
                row[f"f{i}_vb{j}_k_adj"] = float(f.k_adj[j])
        self.rows.append(row)

    def _record_voltages(self, t: float) -> None:
        for i, f in enumerate(self.feeders):
            for bus, v in zip(f.spec.graph.buses, f.ac.voltages_pu()):
                self.volts.append({"t": t, "feeder": i, "bus": bus.name or str(bus.id), "v_pu": float(v)})

    # driver

    def run(self) -> TimeSeries:
        sc = self.scenario
        opf_every = sc.ticks(sc.cadences.opf_s, "opf_s")
        pi_every = sc.ticks(sc.cadences.pi_s, "pi_s")
        retune_every = sc.ticks(sc.cadences.retune_s, "retune_s")
        adjust_every = sc.ticks(sc.cadences.adjust_s, "adjust_s")
        threads = sc.settings.threads
        pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
        try:
            for n in range(sc.n_ticks + 1):
                self._tick(n, n * self.dt, (opf_every, pi_every, retune_every, adjust_every), pool)
        finally:
            if pool is not None:
                pool.shutdown()
        g = self.feeders[0].spec.graph
        return TimeSeries(
            frame=pd.DataFrame(self.rows),
            voltages=pd.DataFrame(self.volts, columns=VOLTAGE_COLUMNS),
            events=self.events,
            dead_zone_kw=kw(g, sc.p_ed),
            controlled=self.control,
        )

    def _tick(self, n: int, t: float, every: tuple[int, int, int, int], pool: ThreadPoolExecutor | None) -> None:
        sc = self.scenario
        opf_every, pi_every, retune_every, adjust_every = every
        extra_p, extra_q, forced = self._disturb(t)

        if sc.opf and n % opf_every == 0:
            def run_dispatch(i: int) -> dict[str, Any]:
                try:
                    return self._dispatch(t, self.feeders[i], forced[i])
                except GridVBError as exc:
                    return {"feeder": self.feeders[i].spec.name, "error": str(exc).splitlines()[0]}

            rounds = _map(pool, run_dispatch, range(len(self.feeders)))
            self._event(t, "opf", rounds=rounds)
            if self.pi_gains is not None:
                lo, hi = output_bounds([f.spec.vbs for f in self.feeders], [f.p_set for f in self.feeders])
                self.pi_gains = with_bounds(self.pi_gains, lo, hi)

        if self.control and n % retune_every == 0:
            self._retune(t, pool)

        if n % pi_every == 0:
            p_econ_i = [f.p_econ(t) for f in self.feeders]
            if self.control and self.pi_gains is not None:
                p_h_net = sum(f.p_h for f in self.feeders)
                p_uf, self.pi_state = pi_step(self.pi_state, p_h_net, sum(p_econ_i), self.pi_gains, p_econ_i)
                self.u = self.pi_gains.saturate(self.pi_state.u_tilde)
            else:
                p_uf = np.asarray(p_econ_i)
            for fd, target in zip(self.feeders, p_uf):
                fd.p_uf = float(target)

        if n % adjust_every == 0:
            for fd in self.feeders:
                fd.k_adj = np.array([adjustment_factor(s, p) for s, p in zip(fd.states, fd.spec.vbs)])

        failures = _map(
            pool,
            lambda i: self._advance(self.feeders[i], extra_p[i], extra_q[i], forced[i]),
            range(len(self.feeders)),
        )
        for i, msg in enumerate(failures):
            if msg:
                self._event(t, "oracle_failed", feeder=i, message=msg)
        self._record(t)
        if sc.opf and n % opf_every == 0:
            self._record_voltages(t)


def run_closed_loop(scenario: ScenarioConfig, control: bool | None = None) -> TimeSeries:
    """Simulate the scenario. `control=False` zeroes every real-time gain (counterfactual pass)."""
    return ClosedLoop(scenario, control).run()


def run_with_counterfactual(scenario: ScenarioConfig) -> tuple[TimeSeries, TimeSeries]:
    return run_closed_loop(scenario, True), run_closed_loop(scenario, False)
