from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, linalg, optimize, signal

from gridvb.errors import NoCrossover, Unstable

log = logging.getLogger(__name__)

STABLE_REAL = -1e-9


class FrequencyModel(Protocol):
    def freqresp(self, w: np.ndarray) -> np.ndarray: ...

    def to_ss(self) -> "StateSpace": ...


def _trim(p: Sequence[float]) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    nz = np.flatnonzero(p)
    return p[nz[0]:] if nz.size else np.zeros(1)


@dataclass(frozen=True)
class RationalTF:
    """num(s)/den(s) with coefficients in descending powers of s."""

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self) -> None:
        num, den = _trim(self.num), _trim(self.den)
        if not den.any():
            raise ValueError("Transfer function denominator is zero")
        if num.any() and len(num) > len(den):
            raise ValueError(f"Improper transfer function: deg num {len(num) - 1} > deg den {len(den) - 1}")
        lead = den[0]
        object.__setattr__(self, "num", num / lead)
        object.__setattr__(self, "den", den / lead)

    @classmethod
    def gain(cls, k: float) -> "RationalTF":
        return cls(np.array([k]), np.array([1.0]))

    @classmethod
    def lag(cls, tau: float) -> "RationalTF":
        """1 / (tau s + 1)"""
        return cls(np.array([1.0]), np.array([tau, 1.0]))

    def __call__(self, s: complex | np.ndarray) -> complex | np.ndarray:
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    def __mul__(self, other: "RationalTF | float") -> "RationalTF":
        if not isinstance(other, RationalTF):
            return RationalTF(self.num * float(other), self.den)
        return RationalTF(np.polymul(self.num, other.num), np.polymul(self.den, other.den))

    __rmul__ = __mul__

    def __add__(self, other: "RationalTF") -> "RationalTF":
        num = np.polyadd(np.polymul(self.num, other.den), np.polymul(other.num, self.den))
        return RationalTF(num, np.polymul(self.den, other.den))

    def feedback(self) -> "RationalTF":
        """Unity negative feedback: L / (1 + L)."""
        return RationalTF(self.num, np.polyadd(self.den, self.num))

    def characteristic(self) -> np.ndarray:
        """den + num of the unity negative feedback loop."""
        return np.polyadd(self.den, self.num)

    def poles(self) -> np.ndarray:
        return np.roots(self.den)

    def dc_gain(self) -> float:
        return float(np.real(self(0.0)))

    def freqresp(self, w: np.ndarray) -> np.ndarray:
        return self(1j * np.asarray(w, dtype=float))

    def to_ss(self) -> "StateSpace":
        if len(self.den) == 1:
            return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), np.array([[self.num[-1]]]))
        A, B, C, D = signal.tf2ss(self.num, self.den)
        return StateSpace(A, B, C, D)


@dataclass(frozen=True)
class StateSpace:
    """SISO realization x' = Ax + Bu, y = Cx + Du. Used for interconnections of many blocks."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @property
    def order(self) -> int:
        return int(self.A.shape[0])

    def series(self, other: "StateSpace | RationalTF") -> "StateSpace":
        """self then other: y = other(self(u))."""
        o = other.to_ss() if isinstance(other, RationalTF) else other
        n1, n2 = self.order, o.order
        A = np.block([[self.A, np.zeros((n1, n2))], [o.B @ self.C, o.A]])
        B = np.vstack([self.B, o.B @ self.D])
        C = np.hstack([o.D @ self.C, o.C])
        return StateSpace(A, B, C, o.D @ self.D)

    def parallel(self, other: "StateSpace | RationalTF") -> "StateSpace":
        o = other.to_ss() if isinstance(other, RationalTF) else other
        A = linalg.block_diag(self.A, o.A)
        return StateSpace(A, np.vstack([self.B, o.B]), np.hstack([self.C, o.C]), self.D + o.D)

    def scale(self, k: float) -> "StateSpace":
        return StateSpace(self.A, self.B, k * self.C, k * self.D)

    def feedback(self) -> "StateSpace":
        """Unity negative feedback y = L(r - y)."""
        d = float(self.D[0, 0])
        if abs(1.0 + d) < 1e-14:
            raise Unstable("Algebraic loop 1 + D = 0")
        inv = 1.0 / (1.0 + d)
        A = self.A - inv * self.B @ self.C
        return StateSpace(A, inv * self.B, inv * self.C, inv * self.D)

    def poles(self) -> np.ndarray:
        return linalg.eigvals(self.A) if self.order else np.zeros(0, dtype=complex)

    def dc_gain(self) -> float:
        if not self.order:
            return float(self.D[0, 0])
        return float(self.D[0, 0] - (self.C @ linalg.solve(self.A, self.B))[0, 0])

    def freqresp(self, w: np.ndarray) -> np.ndarray:
        w = np.atleast_1d(np.asarray(w, dtype=float))
        n = self.order
        out = np.empty(w.shape, dtype=complex)
        eye = np.eye(n)
        for i, wi in enumerate(w):
            g = self.D[0, 0]
            if n:
                g = g + (self.C @ linalg.solve(1j * wi * eye - self.A, self.B))[0, 0]
            out[i] = g
        return out

    def to_ss(self) -> "StateSpace":
        return self


def pade3(t_delay: float) -> RationalTF:
    """[3/3] Pade approximant of exp(-s T)."""
    if t_delay < 0:
        raise ValueError(f"delay must be nonnegative, got {t_delay}")
    if t_delay == 0:
        return RationalTF.gain(1.0)
    n = 3
    num = np.zeros(n + 1)
    den = np.zeros(n + 1)
    num[-1] = den[-1] = 1.0
    c = 1.0
    for k in range(1, n + 1):
        c = t_delay * c * (n - k + 1) / (2 * n - k + 1) / k
        num[n - k] = c * (-1) ** k
        den[n - k] = c
    return RationalTF(num, den)


def is_stable_poly(poly: np.ndarray, threshold: float = STABLE_REAL) -> bool:
    """All roots (companion-matrix eigenvalues) strictly in the left half plane."""
    p = _trim(poly)
    if len(p) == 1:
        return bool(p[0] != 0)
    return bool(np.all(np.roots(p).real < threshold))


def intra_loop(sensitivity: Sequence[float], tau: Sequence[float], gains: Sequence[float], delays: Sequence[float]) -> RationalTF:
    """Loop gain sum_r a_r k_r D_r(s) / (tau_r s + 1) of the proportional intra-feeder loop."""
    total: RationalTF | None = None
    for a, t, k, d in zip(sensitivity, tau, gains, delays):
        term = RationalTF.lag(t) * pade3(d) * (a * k)
        total = term if total is None else total + term
    if total is None:
        return RationalTF.gain(0.0)
    return total


def _characteristic_factors(sensitivity, tau, delays) -> tuple[np.ndarray, list[np.ndarray]]:
    # 1 + sum_r a_r k_r N_r / D_r = 0  ->  prod D + sum_r k_r a_r N_r prod_{q != r} D_q
    dens = []
    nums = []
    for t, d in zip(tau, delays):
        p = pade3(d)
        dens.append(np.polymul([t, 1.0], p.den))
        nums.append(p.num)
    base = np.array([1.0])
    for D in dens:
        base = np.polymul(base, D)
    terms = []
    for r, a in enumerate(sensitivity):
        rest = np.array([float(a)])
        for q, D in enumerate(dens):
            rest = np.polymul(rest, nums[r] if q == r else D)
        terms.append(rest)
    return base, terms


def stability_region(
    sensitivity: Sequence[float],
    tau: Sequence[float],
    k1_grid: Sequence[float],
    k2_grid: Sequence[float],
    delays: Sequence[float] = (0.0, 0.0),
    threads: int = 1,
) -> np.ndarray:
    """Boolean grid over (K1, K2) of the two-VB proportional loop with Pade delay blocks.

    Entry [i, j] is True when the closed loop at (k1_grid[i], k2_grid[j]) is stable.
    """
    if len(sensitivity) != 2 or len(tau) != 2 or len(delays) != 2:
        raise ValueError("stability_region expects exactly two VBs")
    base, (t1, t2) = _characteristic_factors(sensitivity, tau, delays)
    k1 = np.asarray(k1_grid, dtype=float)
    k2 = np.asarray(k2_grid, dtype=float)

    def row(i: int) -> np.ndarray:
        out = np.empty(k2.size, dtype=bool)
        partial = np.polyadd(base, k1[i] * t1)
        for j, kj in enumerate(k2):
            out[j] = is_stable_poly(np.polyadd(partial, kj * t2))
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, range(k1.size)))
    else:
        rows = [row(i) for i in range(k1.size)]
    grid = np.vstack(rows) if rows else np.zeros((0, k2.size), dtype=bool)
    log.debug("stability region with delays %s: %d/%d stable", tuple(delays), int(grid.sum()), grid.size)
    return grid


def region_table(
    sensitivity: Sequence[float],
    tau: Sequence[float],
    k1_grid: Sequence[float],
    k2_grid: Sequence[float],
    delay_cases: Sequence[Sequence[float]],
    threads: int = 1,
) -> pd.DataFrame:
    """Long-format table (k1, k2, delay_case, stable) over several delay cases."""
    frames = []
    K1, K2 = np.meshgrid(np.asarray(k1_grid, float), np.asarray(k2_grid, float), indexing="ij")
    for case, delays in enumerate(delay_cases):
        grid = stability_region(sensitivity, tau, k1_grid, k2_grid, delays, threads)
        frames.append(
            pd.DataFrame({"k1": K1.ravel(), "k2": K2.ravel(), "delay_case": case, "stable": grid.ravel()})
        )
    return pd.concat(frames, ignore_index=True)


def _wgrid(w_min: float, w_max: float, points: int) -> np.ndarray:
    return np.logspace(math.log10(w_min), math.log10(w_max), points)


def gain_crossovers(loop: FrequencyModel, w_min: float = 1e-5, w_max: float = 1e3, points: int = 2000) -> np.ndarray:
    """Frequencies (rad/s) where |L(jw)| = 1, refined with brentq on log|L|."""
    w = _wgrid(w_min, w_max, points)
    mag = np.log(np.abs(loop.freqresp(w)) + 1e-300)
    idx = np.flatnonzero(np.sign(mag[:-1]) != np.sign(mag[1:]))

    def f(lw: float) -> float:
        return float(np.log(abs(loop.freqresp(np.array([math.exp(lw)]))[0]) + 1e-300))

    return np.array([math.exp(optimize.brentq(f, math.log(w[i]), math.log(w[i + 1]))) for i in idx])


def phase_margin(open_loop: FrequencyModel, w_min: float = 1e-5, w_max: float = 1e3) -> float:
    """Smallest phase margin over all gain crossovers, in degrees.

    Raises NoCrossover when |L(jw)| never crosses 1 on the search band.
    """
    wc = gain_crossovers(open_loop, w_min, w_max)
    if not wc.size:
        raise NoCrossover(f"Open loop has no gain crossover in [{w_min:g}, {w_max:g}] rad/s")
    phase = np.degrees(np.angle(open_loop.freqresp(wc)))
    margins = (phase + 180.0 + 180.0) % 360.0 - 180.0
    return float(margins.min())


def settling_time(
    closed_loop: FrequencyModel,
    band: float = 0.02,
    t_max: float | None = None,
    points: int = 4000,
) -> float:
    """Time after which the unit step response stays within band of its final value."""
    ss = closed_loop.to_ss()
    poles = ss.poles()
    if poles.size and poles.real.max() >= STABLE_REAL:
        raise Unstable(f"Closed loop has a pole at {poles[np.argmax(poles.real)]:.4g}")
    final = ss.dc_gain()
    if not ss.order:
        return 0.0
    if t_max is None:
        slowest = 1.0 / max(-poles.real.max(), 1e-6)
        t_max = min(12.0 * slowest, 1e5)

    A, b = ss.A, ss.B[:, 0]
    sol = integrate.solve_ivp(
        lambda t, x: A @ x + b,
        (0.0, t_max),
        np.zeros(ss.order),
        method="RK45",
        t_eval=np.linspace(0.0, t_max, points),
        rtol=1e-8,
        atol=1e-10,
    )
    if not sol.success:
        raise Unstable(f"Step response integration failed: {sol.message}")
    y = ss.C[0] @ sol.y + ss.D[0, 0]
    scale = abs(final) if abs(final) > 1e-12 else max(float(np.abs(y).max()), 1e-12)
    outside = np.flatnonzero(np.abs(y - final) > band * scale)
    if not outside.size:
        return 0.0
    last = int(outside[-1])
    if last + 1 >= sol.t.size:
        return float("inf")
    return float(sol.t[last + 1])
