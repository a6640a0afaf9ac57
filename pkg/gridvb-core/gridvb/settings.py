from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping

from gridvb.errors import ConfigError

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass(frozen=True, slots=True)
class SolverSettings:
    tol: float = 1e-8
    max_iters: int = 200
    step_fraction: float = 0.99
    refinement: int = 3
    stall_iters: int = 10
    kkt: str = "dense"


@dataclass(frozen=True, slots=True)
class OPFSettings:
    alpha: float = 1.0
    epsilon: float = 1e-6
    horizon: int = 10
    dt_min: float = 1.0
    fd_step: float = 1e-4
    accept_tol: float = 1e-6
    tightness_tol: float = 1e-6
    augment_c2: bool = False
    inverter_disc: bool = False
    solver: SolverSettings = field(default_factory=lambda: SolverSettings(tol=1e-8))


@dataclass(frozen=True, slots=True)
class ControlSettings:
    settling_target_s: float = 30.0
    settling_band: float = 0.02
    kp_min: float = 0.01
    kp_max: float = 24.0
    kp_points: int = 60
    ki_ratios: tuple[float, ...] = (0.1, 1.0, 10.0)
    kw: float = 1.0
    noise_pole: float = 1.0
    sample_hold: bool = True
    fd_step: float = 1e-4


@dataclass(frozen=True, slots=True)
class Cadences:
    opf_s: float = 60.0
    pi_s: float = 5.0
    retune_s: float = 300.0
    adjust_s: float = 60.0


@dataclass(frozen=True, slots=True)
class Settings:
    threads: int = 1
    log_level: str = "WARNING"
    opf: OPFSettings = field(default_factory=OPFSettings)
    control: ControlSettings = field(default_factory=ControlSettings)
    cadences: Cadences = field(default_factory=Cadences)

    @classmethod
    def from_env(cls, environ: Mapping[str, str] | None = None) -> "Settings":
        env = os.environ if environ is None else environ
        threads = env.get("GRIDVB_THREADS", "").strip()
        level = env.get("GRIDVB_LOG_LEVEL", "").strip().upper()

        out = cls()
        if threads:
            try:
                n = int(threads)
            except ValueError:
                raise ConfigError(f"GRIDVB_THREADS must be a positive integer, got {threads!r}") from None
            if n < 1:
                raise ConfigError(f"GRIDVB_THREADS must be a positive integer, got {threads!r}")
            out = replace(out, threads=n)
        if level:
            if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
                raise ConfigError(f"GRIDVB_LOG_LEVEL must be DEBUG, INFO, WARNING or ERROR, got {level!r}")
            out = replace(out, log_level=level)
        return out


def override(obj: Any, values: Mapping[str, Any] | None, where: str = "settings") -> Any:
    """Return a copy of a settings dataclass with fields replaced from a JSON block.

    Nested dataclasses are overridden recursively; unknown keys are rejected.
    """
    if not values:
        return obj
    known = {f.name: f for f in fields(obj)}
    changes: dict[str, Any] = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"Unknown key {where}.{key}.\nKnown keys: {sorted(known)}")
        current = getattr(obj, key)
        if hasattr(current, "__dataclass_fields__"):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{where}.{key} must be an object")
            changes[key] = override(current, value, f"{where}.{key}")
        elif isinstance(current, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{key} must be a list, got {value!r}")
            changes[key] = tuple(value)
        elif isinstance(value, (dict, list)) or (isinstance(value, bool) and not isinstance(current, bool)):
            raise ConfigError(f"{where}.{key} must be of type {type(current).__name__}, got {value!r}")
        else:
            try:
                changes[key] = type(current)(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{where}.{key} must be of type {type(current).__name__}, got {value!r}") from None
    return replace(obj, **changes)


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.WARNING), format=LOG_FORMAT)
    log.debug("logging configured at %s", level)
