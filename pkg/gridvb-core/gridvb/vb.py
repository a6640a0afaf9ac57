from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

from gridvb.errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class VBParams:
    """Virtual battery parameters.

    Powers in pu, energies in pu*h, times in seconds.
    p_b > 0 drains the battery (b falls), p_b < 0 fills it.
    """

    p_min: float
    p_max: float
    b_min: float
    b_max: float
    tau: float = 1.0
    t_delay: float = 0.0
    alpha_b: float = 0.0
    b_low_thresh: float | None = None
    b_high_thresh: float | None = None
    w_exp: float = 2.0

    def __post_init__(self) -> None:
        span = self.b_max - self.b_min
        if self.b_low_thresh is None:
            object.__setattr__(self, "b_low_thresh", self.b_min + 0.1 * span)
        if self.b_high_thresh is None:
            object.__setattr__(self, "b_high_thresh", self.b_max - 0.1 * span)

        if self.tau <= 0:
            raise ConfigError(f"VB tau must be positive, got {self.tau}")
        if self.t_delay < 0:
            raise ConfigError(f"VB t_delay must be nonnegative, got {self.t_delay}")
        if not self.p_min < 0 < self.p_max:
            raise ConfigError(f"VB power bounds must satisfy p_min < 0 < p_max, got [{self.p_min}, {self.p_max}]")
        mid = 0.5 * (self.b_min + self.b_max)
        if not self.b_min < self.b_low_thresh < mid < self.b_high_thresh < self.b_max:
            raise ConfigError(
                "VB energy thresholds out of order.\n"
                f"b_min={self.b_min} b_low={self.b_low_thresh} b_high={self.b_high_thresh} b_max={self.b_max}"
            )
        if self.w_exp <= 1:
            raise ConfigError(f"VB w_exp must exceed 1, got {self.w_exp}")

    @classmethod
    def symmetric(cls, p_max: float, energy: float, tau: float = 1.0, t_delay: float = 0.0, **kw) -> "VBParams":
        """Box [-p_max, p_max] and energy window [0, energy]."""
        return cls(p_min=-p_max, p_max=p_max, b_min=0.0, b_max=energy, tau=tau, t_delay=t_delay, **kw)

    def delay_samples(self, dt: float) -> int:
        # nearest sample; 0.5 rounds up
        return int(math.floor(self.t_delay / dt + 0.5))

    def clamp(self, p: float) -> float:
        return min(max(p, self.p_min), self.p_max)


@dataclass(frozen=True, slots=True)
class VBState:
    b: float
    p_b: float = 0.0
    delay_line: tuple[float, ...] = ()
    saturated: bool = False

    @classmethod
    def initial(cls, params: VBParams, b0: float, dt: float, p_b: float = 0.0) -> "VBState":
        return cls(b=b0, p_b=p_b, delay_line=(p_b,) * params.delay_samples(dt))


def step_continuous(state: VBState, p_in: float, dt: float, params: VBParams) -> VBState:
    """Advance the lag-and-delay plant by one step of dt seconds."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    p_in = params.clamp(p_in)

    line = state.delay_line
    if line:
        delayed = line[0]
        line = line[1:] + (p_in,)
    else:
        delayed = p_in

    decay = math.exp(-dt / params.tau)
    p_b = decay * state.p_b + (1.0 - decay) * delayed
    b = state.b - dt * (params.alpha_b * state.b + p_b) / 3600.0

    # empty cannot discharge, full cannot charge
    saturated = False
    if b < params.b_min:
        saturated = True
        b = params.b_min
        p_b = min(p_b, 0.0)
    elif b > params.b_max:
        saturated = True
        b = params.b_max
        p_b = max(p_b, 0.0)
    if saturated and not state.saturated:
        log.info("VB energy limit reached (b=%.4g)", b)

    return VBState(b=b, p_b=p_b, delay_line=line, saturated=saturated)


def step_reduced(b: float, p_b: float, dt_min: float) -> float:
    if dt_min <= 0:
        raise ValueError("dt_min must be positive")
    return b - (dt_min / 60.0) * p_b


def adjustment_factor(state: VBState, params: VBParams) -> float:
    """SoC-dependent taper applied to the proportional gain.

    p_b < 0 tapers below b_low_thresh, p_b > 0 tapers above b_high_thresh.
    """
    b = min(max(state.b, params.b_min), params.b_max)
    if state.p_b < 0 and b < params.b_low_thresh:
        return ((b - params.b_min) / (params.b_low_thresh - params.b_min)) ** params.w_exp
    if state.p_b > 0 and b > params.b_high_thresh:
        return ((params.b_max - b) / (params.b_max - params.b_high_thresh)) ** params.w_exp
    return 1.0


def with_output(state: VBState, p_b: float) -> VBState:
    """State with the realized output overwritten (used when setting an operating point)."""
    return replace(state, p_b=p_b, delay_line=(p_b,) * len(state.delay_line))
