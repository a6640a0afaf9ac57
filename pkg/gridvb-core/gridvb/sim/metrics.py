from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from gridvb.errors import EmptyWindow
from gridvb.sim.loop import TimeSeries

log = logging.getLogger(__name__)

RECOVERY_HOLD_S = 10.0


@dataclass(frozen=True, slots=True)
class Recovery:
    attack_s: float
    recovered_s: float | None

    @property
    def time_to_recover(self) -> float | None:
        return None if self.recovered_s is None else self.recovered_s - self.attack_s


@dataclass(frozen=True)
class MetricsReport:
    window: tuple[float, float]
    error_mean_kw: float
    error_std_kw: float
    baseline_std_kw: float | None = None
    v_min_pu: float | None = None
    v_max_pu: float | None = None
    recoveries: tuple[Recovery, ...] = ()
    retune_wall_s: tuple[float, ...] = field(default_factory=tuple)

    @property
    def std_reduction(self) -> float | None:
        """Fractional drop of tracking-error std against the control-off run."""
        if self.baseline_std_kw is None or self.baseline_std_kw == 0:
            return None
        return 1.0 - self.error_std_kw / self.baseline_std_kw

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["window"] = list(self.window)
        out["std_reduction"] = self.std_reduction
        out["recoveries"] = [
            {"attack_s": r.attack_s, "recovered_s": r.recovered_s, "time_to_recover_s": r.time_to_recover}
            for r in self.recoveries
        ]
        out["retune_wall_s"] = list(self.retune_wall_s)
        return out


def _window(ts: TimeSeries, start: float, end: float) -> np.ndarray:
    t = ts.frame["t"].to_numpy()
    mask = (t >= start) & (t <= end)
    if not mask.any():
        raise EmptyWindow(start, end)
    return ts.frame.loc[mask, "error_kw"].to_numpy()


def error_stats(ts: TimeSeries, start: float = 0.0, end: float = math.inf) -> tuple[float, float]:
    """Mean and population std of P_h,net - P_econ,net over [start, end], in kW."""
    e = _window(ts, start, end)
    return float(e.mean()), float(e.std())


def attack_recovery(ts: TimeSeries, hold_s: float = RECOVERY_HOLD_S) -> list[Recovery]:
    """Per logged attack: first re-entry into the dead zone that lasts hold_s.

    An attack that never pushes the error out of the dead zone recovers at once.
    """
    t = ts.frame["t"].to_numpy()
    inside = np.abs(ts.frame["error_kw"].to_numpy()) <= ts.dead_zone_kw
    out: list[Recovery] = []
    for start in ts.attack_starts():
        idx = np.flatnonzero((t >= start) & ~inside)
        if not idx.size:
            out.append(Recovery(start, start))
            continue
        recovered = None
        i = int(idx[0])
        while i < t.size:
            if not inside[i]:
                i += 1
                continue
            j = i
            while j < t.size and inside[j]:
                j += 1
            if t[j - 1] - t[i] >= hold_s:
                recovered = float(t[i])
                break
            i = j
        out.append(Recovery(start, recovered))
    return out


def metrics(
    ts: TimeSeries,
    window: tuple[float, float] | None = None,
    baseline: TimeSeries | None = None,
) -> MetricsReport:
    start, end = window if window is not None else (0.0, float(ts.frame["t"].max()))
    mean, std = error_stats(ts, start, end)
    base_std = error_stats(baseline, start, end)[1] if baseline is not None else None
    v = ts.voltages["v_pu"]
    report = MetricsReport(
        window=(start, end),
        error_mean_kw=mean,
        error_std_kw=std,
        baseline_std_kw=base_std,
        v_min_pu=float(v.min()) if len(v) else None,
        v_max_pu=float(v.max()) if len(v) else None,
        recoveries=tuple(attack_recovery(ts)),
        retune_wall_s=tuple(float(e["wall_s"]) for e in ts.events if e["kind"] == "retune"),
    )
    log.info(
        "window [%.1f, %.1f] s: error mean %.3f kW, std %.3f kW (baseline %s)",
        start,
        end,
        mean,
        std,
        "n/a" if base_std is None else f"{base_std:.3f} kW",
    )
    return report
