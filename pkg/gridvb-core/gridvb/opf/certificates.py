from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gridvb.errors import OracleDiverged
from gridvb.network import FeederGraph, lindistflow
from gridvb.opf.model import C1Result, C2Result, ExactnessReport, OPFInput, OPFSolution
from gridvb.powerflow import head_node_power, solve_ac

log = logging.getLogger(__name__)


def check_c1(
    graph: FeederGraph,
    p_max: Sequence[float],
    q_max: Sequence[float],
    v_min: Sequence[float] | None = None,
) -> C1Result:
    """Parameter-only positivity check along every leaf path.

    p_max/q_max are per-bus injection upper bounds. Upper bounds on branch flows come from
    LinDistFlow at those caps, floored at zero.
    """
    topo = graph.topology
    if v_min is None:
        v_min = [b.v_min for b in graph.buses]
    v_min = np.asarray(v_min, dtype=float)
    sol = lindistflow(graph, np.asarray(p_max, dtype=float) + 1j * np.asarray(q_max, dtype=float))
    P_hat = np.maximum(sol.S_hat.real, 0.0)
    Q_hat = np.maximum(sol.S_hat.imag, 0.0)

    u = {i: np.array([topo.r[i], topo.x[i]]) for i in range(1, graph.n)}
    A_low = {
        i: np.eye(2) - (2.0 / v_min[i]) * np.outer(u[i], [P_hat[i], Q_hat[i]])
        for i in range(1, graph.n)
    }

    min_entry = np.inf
    witness: tuple[int, tuple[int, ...], int, int] = (-1, (), 0, 0)
    for leaf in topo.leaves:
        # l_1 next to the head node ... l_n = leaf
        path = tuple(reversed(topo.path(leaf)))
        for t in range(1, len(path) + 1):
            w = u[path[t - 1]].copy()
            for s in range(t, 0, -1):
                if s < t:
                    w = A_low[path[s - 1]] @ w
                m = float(w.min())
                if m < min_entry:
                    min_entry = m
                    witness = (leaf, path, s, t)
    result = C1Result(bool(min_entry > 0), float(min_entry), *witness)
    log.debug("C1 %s (min entry %.4g)", "holds" if result.holds else "fails", result.min_entry)
    return result


def injection_caps(inp: OPFInput) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus upper bounds on (p, q) injections over the horizon."""
    p = np.max(inp.p_solar - inp.p_load, axis=1)
    q = np.max(-inp.q_load, axis=1)
    for j, bus in enumerate(inp.vb_bus):
        lo, hi = inp.vb_limits(j)
        p[bus] += hi
        if inp.inverter_disc:
            q[bus] += inp.vbs[j].p_max if inp.s_max is None else float(inp.s_max[j])
    p[0] = q[0] = 0.0
    return p, q


def check_c2(graph: FeederGraph, solution: OPFSolution) -> C2Result:
    """LinDistFlow voltages at each step's optimal injections stay below v_max."""
    v_max = np.array([b.v_max for b in graph.buses])
    worst_margin, worst_v, worst_bus, worst_step = np.inf, -np.inf, 0, 0
    for k in range(solution.horizon):
        s = solution.p_inj[k] + 1j * solution.q_inj[k]
        v_hat = lindistflow(graph, s).v_hat
        margin = v_max[1:] - v_hat[1:]
        i = int(np.argmin(margin))
        if margin[i] < worst_margin:
            worst_margin, worst_v, worst_bus, worst_step = float(margin[i]), float(v_hat[i + 1]), i + 1, k
    return C2Result(bool(worst_margin >= 0), worst_v, worst_bus, worst_step, worst_margin)


def verify_tightness(solution: OPFSolution, tol: float = 1e-6) -> tuple[float, dict[tuple[int, int], float]]:
    """Max over branches and steps of l - |S|^2/v, plus the per-(step, branch) map."""
    res = solution.residuals
    T, n = res.shape
    per_branch = {(k, i): float(res[k, i]) for k in range(T) for i in range(1, n)}
    worst = float(res[:, 1:].max()) if n > 1 else 0.0
    if worst > tol:
        log.info("relaxation not tight: max residual %.3e > %.1e", worst, tol)
    return worst, per_branch


def certify(inp: OPFInput, solution: OPFSolution, tol: float = 1e-6) -> ExactnessReport:
    p_cap, q_cap = injection_caps(inp)
    c1 = check_c1(inp.graph, p_cap, q_cap)
    c2 = check_c2(inp.graph, solution)
    worst, per_branch = verify_tightness(solution, tol)
    return ExactnessReport(c1=c1, c2=c2, max_residual=worst, residual_map=per_branch, tol=tol)


@dataclass(frozen=True, slots=True)
class SweepRow:
    multiple: float
    injection_pu: float
    max_v_hat: float
    bus: int
    c2_holds: bool


def c2_sweep(graph: FeederGraph, vb_buses: Sequence[int], multiples: Sequence[float]) -> list[SweepRow]:
    """Aggregate VB injection as multiples of total demand, split evenly over the VB buses."""
    if not vb_buses:
        raise ValueError("c2_sweep needs at least one VB bus")
    base = graph.nominal_injections()
    demand = sum(b.p_load for b in graph.buses)
    v_max = np.array([b.v_max for b in graph.buses])
    rows = []
    for m in multiples:
        s = base.copy()
        total = float(m) * demand
        for bus in vb_buses:
            s[bus] += total / len(vb_buses)
        v_hat = lindistflow(graph, s).v_hat
        i = int(np.argmax(v_hat[1:] - v_max[1:])) + 1
        rows.append(SweepRow(float(m), total, float(v_hat[1:].max()), i, bool(np.all(v_hat[1:] <= v_max[1:]))))
    return rows


@dataclass(frozen=True, slots=True)
class ProjectionReport:
    predicted_p0: np.ndarray
    realized_p0: np.ndarray
    max_v: np.ndarray
    min_v: np.ndarray
    v_violations: int
    diverged: tuple[int, ...] = ()

    @property
    def max_tracking_gap(self) -> float:
        ok = np.isfinite(self.realized_p0)
        return float(np.max(np.abs(self.predicted_p0[ok] - self.realized_p0[ok]))) if ok.any() else np.inf


def project_to_ac(inp: OPFInput, solution: OPFSolution) -> ProjectionReport:
    """Replay each step's dispatch on the AC oracle and compare with the relaxed prediction."""
    g = inp.graph
    T = solution.horizon
    realized = np.full(T, np.nan)
    max_v = np.full(T, np.nan)
    min_v = np.full(T, np.nan)
    v_max = np.array([b.v_max for b in g.buses])
    v_min = np.array([b.v_min for b in g.buses])
    violations = 0
    diverged = []
    for k in range(T):
        s = solution.p_inj[k] + 1j * solution.q_inj[k]
        s[0] = 0.0
        try:
            ac = solve_ac(g, s)
        except OracleDiverged:
            diverged.append(k)
            continue
        realized[k] = head_node_power(ac)
        max_v[k] = float(np.sqrt(ac.v.max()))
        min_v[k] = float(np.sqrt(ac.v.min()))
        violations += int(np.sum(ac.v > v_max + 1e-9) + np.sum(ac.v < v_min - 1e-9))
    return ProjectionReport(solution.p0, realized, max_v, min_v, violations, tuple(diverged))
