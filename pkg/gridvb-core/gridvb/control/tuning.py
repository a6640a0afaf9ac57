from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
import pandas as pd

from gridvb.control.inter import PIGains
from gridvb.errors import NoCrossover, NoFeasibleGain, Unstable
from gridvb.settings import ControlSettings
from gridvb.stability import RationalTF, StateSpace, pade3, phase_margin, settling_time

log = logging.getLogger(__name__)

COLUMNS = ["kp", "ki", "ratio", "phase_margin_deg", "settling_s"]
W_MIN, W_MAX, W_POINTS = 1e-4, 1e2, 1500


@dataclass(frozen=True)
class FeederLoop:
    """One feeder's proportional intra loop, as seen from its head-node target P_uf."""

    sensitivity: np.ndarray
    tau: np.ndarray
    t_delay: np.ndarray
    k: np.ndarray

    def loop(self, delays: bool = True) -> StateSpace:
        total: StateSpace | None = None
        for a, t, d, k in zip(self.sensitivity, self.tau, self.t_delay, self.k):
            block = RationalTF.lag(t) * (pade3(d) if delays else 1.0)
            term = (block * (a * k)).to_ss()
            total = term if total is None else total.parallel(term)
        if total is None:
            return RationalTF.gain(0.0).to_ss()
        return total

    def closed(self, delays: bool = True) -> StateSpace:
        """P_uf -> P_h with the proportional loop closed."""
        return self.loop(delays).feedback()


@dataclass(frozen=True)
class InterFeederModel:
    """Aggregate plant u -> P_h,net seen by the substation PI.

    VB delays are left out unless vb_delays is set; the PI hold is modeled as a
    half-period Pade delay when sample_hold is set.
    """

    feeders: tuple[FeederLoop, ...]
    kf: tuple[float, ...]
    ts: float = 5.0
    sample_hold: bool = True
    vb_delays: bool = False

    def plant(self) -> StateSpace:
        G: StateSpace | None = None
        for f, share in zip(self.feeders, self.kf):
            H = f.closed(self.vb_delays).scale(share)
            G = H if G is None else G.parallel(H)
        if G is None:
            raise ValueError("inter-feeder model needs at least one feeder")
        if self.sample_hold:
            G = G.series(pade3(self.ts / 2.0))
        return G


def pi_tf(kp: float, ki: float, ts: float) -> RationalTF:
    """Continuous equivalent of the per-tick PI: kp + ki / (ts s)."""
    return RationalTF(np.array([kp, ki / ts]), np.array([1.0, 0.0]))


class _SampledLoop:
    """C(jw) G(jw) with G tabulated once on a log grid."""

    def __init__(self, w: np.ndarray, g: np.ndarray, controller: RationalTF) -> None:
        self.lw = np.log(w)
        self.g = g
        self.controller = controller

    def freqresp(self, w: np.ndarray) -> np.ndarray:
        lw = np.log(np.atleast_1d(w))
        g = np.interp(lw, self.lw, self.g.real) + 1j * np.interp(lw, self.lw, self.g.imag)
        return self.controller.freqresp(w) * g


def evaluate_pi(
    plant: StateSpace,
    kp: float,
    ki: float,
    ts: float,
    response: tuple[np.ndarray, np.ndarray] | None = None,
    t_max: float | None = None,
) -> tuple[float, float]:
    """(phase margin in degrees, 2% settling time in s) for signed gains kp, ki."""
    # u = C (P_h - P_ref) closes as negative feedback through L = -C G
    controller = pi_tf(-kp, -ki, ts)
    if response is None:
        w = np.geomspace(W_MIN, W_MAX, W_POINTS)
        response = (w, plant.freqresp(w))
    w, g = response
    try:
        pm = phase_margin(_SampledLoop(w, g, controller), w_min=w[0], w_max=w[-1])
    except NoCrossover:
        pm = math.inf
    try:
        ts_settle = settling_time(plant.series(controller).feedback(), t_max=t_max)
    except Unstable:
        ts_settle = math.inf
    return pm, ts_settle


def design_pi_gains(
    model: InterFeederModel,
    settings: ControlSettings | None = None,
    p_ed: float = 0.0,
    u_min: float = -math.inf,
    u_max: float = math.inf,
) -> tuple[PIGains, pd.DataFrame]:
    """Sweep kp over a log grid for each ki/kp ratio and keep the best-margin point
    whose closed-loop settling time meets the target."""
    cfg = settings or ControlSettings()
    t0 = time.perf_counter()
    plant = model.plant()
    g0 = plant.dc_gain()
    if abs(g0) < 1e-12:
        raise NoFeasibleGain("Inter-feeder plant has zero DC gain; intra loops are open")
    sign = -1.0 if g0 > 0 else 1.0
    w = np.geomspace(W_MIN, W_MAX, W_POINTS)
    response = (w, plant.freqresp(w))
    horizon = 10.0 * cfg.settling_target_s

    rows = []
    for ratio in cfg.ki_ratios:
        for mag in np.geomspace(cfg.kp_min, cfg.kp_max, cfg.kp_points):
            kp, ki = sign * mag, sign * mag * ratio
            pm, st = evaluate_pi(plant, kp, ki, model.ts, response, t_max=horizon)
            rows.append((kp, ki, ratio, pm, st))
    table = pd.DataFrame(rows, columns=COLUMNS)

    ok = table[(table.settling_s <= cfg.settling_target_s) & np.isfinite(table.phase_margin_deg)]
    if ok.empty:
        raise NoFeasibleGain(
            "No grid point meets the settling target.\n"
            f"Target: {cfg.settling_target_s} s  best: {table.settling_s.min():.4g} s"
        )
    best = ok.sort_values(["phase_margin_deg", "settling_s"], ascending=[False, True]).iloc[0]
    gains = PIGains(
        kp=float(best.kp),
        ki=float(best.ki),
        kw=cfg.kw,
        p_ed=p_ed,
        kf=tuple(model.kf),
        u_min=u_min,
        u_max=u_max,
    )
    log.info(
        "PI gains kp=%.4g ki=%.4g (margin %.1f deg, settling %.1f s, %.2fs)",
        gains.kp,
        gains.ki,
        best.phase_margin_deg,
        best.settling_s,
        time.perf_counter() - t0,
    )
    return gains, table

