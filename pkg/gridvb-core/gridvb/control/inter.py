from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from gridvb.vb import VBParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PIGains:
    """Substation PI with dead zone and back-calculation anti-windup. Powers in pu."""

    kp: float
    ki: float
    kw: float = 1.0
    p_ed: float = 0.0
    kf: tuple[float, ...] = (1.0,)
    u_min: float = -np.inf
    u_max: float = np.inf

    def __post_init__(self) -> None:
        if self.p_ed < 0:
            raise ValueError(f"dead zone must be nonnegative, got {self.p_ed}")
        if self.kw < 0:
            raise ValueError(f"anti-windup gain must be nonnegative, got {self.kw}")
        if self.u_min > self.u_max:
            raise ValueError(f"saturation bounds reversed: [{self.u_min}, {self.u_max}]")
        if abs(sum(self.kf) - 1.0) > 1e-9:
            raise ValueError(f"feeder scaling factors must sum to 1, got {sum(self.kf)}")

    def saturate(self, u: float) -> float:
        return min(max(u, self.u_min), self.u_max)


@dataclass(frozen=True, slots=True)
class PIState:
    u_tilde: float = 0.0
    e_prev: float = 0.0


def dead_zone(e: float, p_ed: float) -> float:
    return 0.0 if abs(e) <= p_ed else e


def pi_step(
    state: PIState,
    p_h_net: float,
    p_econ_net: float,
    gains: PIGains,
    p_econ_i: Sequence[float],
) -> tuple[np.ndarray, PIState]:
    """One inter-feeder tick. Returns per-feeder head-node targets P_uf and the new state."""
    e = dead_zone(p_h_net - p_econ_net, gains.p_ed)
    excess = state.u_tilde - gains.saturate(state.u_tilde)
    u_tilde = state.u_tilde + gains.kp * (e - state.e_prev) + gains.ki * (state.e_prev - gains.kw * excess)
    u = gains.saturate(u_tilde)
    p_uf = np.asarray(gains.kf, dtype=float) * u + np.asarray(p_econ_i, dtype=float)
    return p_uf, PIState(u_tilde=u_tilde, e_prev=e)


def capacity_shares(feeder_vbs: Sequence[Sequence[VBParams]]) -> tuple[float, ...]:
    """K_f of each feeder: its VB power capacity over the total."""
    caps = np.array([sum(p.p_max for p in vbs) for vbs in feeder_vbs], dtype=float)
    if caps.sum() <= 0:
        raise ValueError("total VB capacity must be positive")
    shares = caps / caps.sum()
    return tuple(float(s) for s in shares)


def output_bounds(feeder_vbs: Sequence[Sequence[VBParams]], setpoints: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Range of head-node shift reachable with every VB driven to a power limit.

    Injection lowers head-node import, so u_min uses the upper power limits.
    """
    lo = hi = 0.0
    for vbs, p_set in zip(feeder_vbs, setpoints):
        for p, s in zip(vbs, p_set):
            lo += s - p.p_max
            hi += s - p.p_min
    return lo, hi


def with_bounds(gains: PIGains, u_min: float, u_max: float) -> PIGains:
    return replace(gains, u_min=u_min, u_max=u_max)
