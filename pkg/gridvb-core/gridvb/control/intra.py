from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from gridvb.control.model import LinearFeederModel
from gridvb.errors import NoStableGainFound, UnstableClosedLoop

log = logging.getLogger(__name__)

MAX_ITERS = 200
XATOL = 1e-10
FATOL = 1e-15
GTOL = 1e-9
FD_STEP = 1e-7
ARMIJO = 1e-4
MIN_DAMPING = 1e-10


@dataclass(frozen=True)
class IntraGains:
    k: np.ndarray
    rho: np.ndarray
    k_adj: np.ndarray | None = None
    cost: float = math.nan
    crossover: float = 0.0
    starts: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        k = np.asarray(self.k, dtype=float)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        if self.k_adj is None:
            object.__setattr__(self, "k_adj", np.ones_like(k))
        if not np.all(np.isfinite(k)):
            raise ValueError(f"intra gains must be finite, got {k}")
        if np.any(self.rho <= 0):
            raise ValueError(f"control penalties must be positive, got {self.rho}")

    @classmethod
    def zero(cls, m: int) -> "IntraGains":
        return cls(np.zeros(m), np.ones(m))


def h2_cost(model: LinearFeederModel, k: Sequence[float], rho: Sequence[float]) -> float:
    """Steady-state var(e) + sum_r rho_r var(u_r) under unit white noise on w."""
    k = np.asarray(k, dtype=float)
    rho = np.asarray(rho, dtype=float)
    A = model.closed_loop(k)
    top = float(np.linalg.eigvals(A).real.max())
    if top >= 0.0:
        raise UnstableClosedLoop(top)
    sigma = linalg.solve_continuous_lyapunov(A, -model.B_w @ model.B_w.T)
    var_e = float((model.C @ sigma @ model.C.T)[0, 0])
    # u_r = -k_r e
    return var_e + float(np.sum(rho * k * k)) * var_e


def bandwidth_cap(t_delay_max: float) -> float:
    """Largest admissible gain crossover in rad/s; infinite without delays."""
    return math.inf if t_delay_max <= 0 else 1.0 / (5.0 * t_delay_max)


def max_crossover(model: LinearFeederModel, k: Sequence[float], w_min: float = 1e-4, w_max: float = 1e3) -> float:
    """Highest frequency where |L(jw)| >= 1, or 0 when the loop gain stays below one."""
    w = np.logspace(math.log10(w_min), math.log10(w_max), 400)
    above = np.flatnonzero(np.abs(model.loop_gain(k, w)) >= 1.0)
    return float(w[above[-1]]) if above.size else 0.0


def _within_cap(model: LinearFeederModel, k: np.ndarray, cap: float) -> bool:
    if math.isinf(cap):
        return True
    w = np.logspace(math.log10(cap), 3.0, 60)
    return bool(np.all(np.abs(model.loop_gain(k, w)) <= 1.0 + 1e-9))


def default_rho(model: LinearFeederModel) -> np.ndarray:
    """Penalties inversely proportional to VB capacity, normalized to mean capacity."""
    m = model.n_inputs
    if model.p_max is None:
        return np.ones(m)
    p = np.asarray(model.p_max, dtype=float)
    return p.mean() / p


def _gradient(J: Callable[[np.ndarray], float], x: np.ndarray, f: float) -> np.ndarray:
    """Forward differences, falling back to a backward step where the forward point is rejected."""
    g = np.empty_like(x)
    for i in range(x.size):
        h = FD_STEP * max(1.0, abs(x[i]))
        step = np.zeros_like(x)
        step[i] = h
        f_fwd = J(x + step)
        g[i] = (f_fwd - f) / h if math.isfinite(f_fwd) else (f - J(x - step)) / h
    return g


def _minimize(J: Callable[[np.ndarray], float], x0: np.ndarray) -> tuple[np.ndarray, float]:
    """Damped BFGS from x0 with finite-difference gradients.

    Steps are halved until J is finite and passes the Armijo test, so unstable or
    over-cap points are never accepted.
    """
    x = x0.astype(float)
    f = J(x)
    if not math.isfinite(f):
        return x, f
    n = x.size
    H = np.eye(n)
    g = _gradient(J, x, f)
    it = 0
    for it in range(1, MAX_ITERS * n + 1):
        if not np.all(np.isfinite(g)) or np.linalg.norm(g, np.inf) <= GTOL * max(1.0, abs(f)):
            break
        d = -H @ g
        if g @ d >= 0:
            H = np.eye(n)
            d = -g
        t = 1.0
        while t >= MIN_DAMPING:
            x_new = x + t * d
            f_new = J(x_new)
            if math.isfinite(f_new) and f_new <= f + ARMIJO * t * (g @ d):
                break
            t *= 0.5
        else:
            break
        g_new = _gradient(J, x_new, f_new)
        s, y = x_new - x, g_new - g
        done = np.linalg.norm(s, np.inf) <= XATOL or f - f_new <= FATOL
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            V = np.eye(n) - np.outer(s, y) / sy
            H = V @ H @ V.T + np.outer(s, s) / sy
        x, f, g = x_new, f_new, g_new
        if done:
            break
    log.debug("quasi-Newton stopped after %d iterations at f=%.10g", it, f)
    return x, f


def design_intra_gains(
    model: LinearFeederModel,
    rho: Sequence[float] | None = None,
    t_delay_max: float | None = None,
    starts: Sequence[Sequence[float]] | None = None,
) -> IntraGains:
    """Minimize h2_cost over the proportional gains subject to stability and the bandwidth cap.

    Starts from k = 0 and from a capacity-proportional point unless `starts` is given.
    """
    m = model.n_inputs
    rho = default_rho(model) if rho is None else np.asarray(rho, dtype=float)
    if t_delay_max is None:
        t_delay_max = 0.0 if model.t_delay is None or not model.t_delay.size else float(model.t_delay.max())
    cap = bandwidth_cap(t_delay_max)

    def J(k: np.ndarray) -> float:
        try:
            cost = h2_cost(model, k, rho)
        except UnstableClosedLoop:
            return math.inf
        if not _within_cap(model, k, cap):
            return math.inf
        return cost

    if starts is None:
        cap_start = 0.5 * (np.ones(m) if model.p_max is None else model.p_max / model.p_max.max())
        if model.sensitivity is not None:
            cap_start = cap_start * np.sign(model.sensitivity)
        starts = [np.zeros(m), cap_start]

    best_k, best_f = None, math.inf
    tried: dict[str, float] = {}
    for x0 in starts:
        x0 = np.asarray(x0, dtype=float)
        k, f = _minimize(J, x0)
        tried[np.array2string(x0, precision=3)] = f
        if f < best_f:
            best_k, best_f = k, f

    if best_k is None or not math.isfinite(best_f):
        raise NoStableGainFound(
            "No start produced a stable gain within the bandwidth cap.\n"
            f"Cap: {cap:.4g} rad/s  starts: {list(tried)}"
        )

    wc = max_crossover(model, best_k)
    top = float(np.linalg.eigvals(model.closed_loop(best_k)).real.max())
    if top >= 0 or wc > cap * (1 + 1e-6):
        raise NoStableGainFound(f"Designed gains fail the final check.\nmax Re {top:.3e}  crossover {wc:.4g} > cap {cap:.4g}")
    log.info("intra gains %s (cost %.6g, crossover %.4g rad/s)", np.round(best_k, 5), best_f, wc)
    return IntraGains(k=best_k, rho=rho, cost=best_f, crossover=wc, starts=tried)


def intra_step(
    p_uf: float,
    p_h: float,
    gains: IntraGains,
    p_set: Sequence[float],
    k_adj: Sequence[float] | None = None,
) -> np.ndarray:
    """p_in = K K_adj (P_uf - P_h) + P_set for every VB of a feeder."""
    k_adj = gains.k_adj if k_adj is None else np.asarray(k_adj, dtype=float)
    return gains.k * k_adj * (p_uf - p_h) + np.asarray(p_set, dtype=float)
