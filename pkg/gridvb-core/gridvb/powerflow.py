from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gridvb.errors import NotConverged, VoltageCollapse
from gridvb.network import FeederGraph

log = logging.getLogger(__name__)

MAX_ITERS = 100
TOL = 1e-10


@dataclass(frozen=True, slots=True)
class ACSolution:
    """Fixed point of the branch-flow equations.

    Branch arrays are indexed by child bus; entry 0 is unused and zero.
    S is the sending-end flow from the child toward the head node.
    """

    v: np.ndarray
    l: np.ndarray
    S: np.ndarray
    s0: complex
    loss_total: float
    iterations: int
    residual: float

    def voltages_pu(self) -> np.ndarray:
        return np.sqrt(self.v)


def solve_ac(
    graph: FeederGraph,
    injections: Sequence[complex],
    tol: float = TOL,
    max_iters: int = MAX_ITERS,
) -> ACSolution:
    """Backward/forward sweep from a flat start."""
    topo = graph.topology
    M = topo.path_matrix
    r, x = topo.r, topo.x
    z = r + 1j * x
    z2 = r * r + x * x
    root_kids = np.array(topo.children[0], dtype=int)

    s = np.asarray(injections, dtype=complex).copy()
    s[0] = 0.0
    subtree = M.T @ s

    n = graph.n
    v = np.full(n, graph.v0)
    l = np.zeros(n)
    S = np.zeros(n, dtype=complex)

    delta = np.inf
    for it in range(1, max_iters + 1):
        zl = z * l
        # S_i = s_i + sum over children h of (S_h - z_h l_h)
        S_new = subtree - (M.T @ zl - zl)
        S_new[0] = 0.0

        drop = 2.0 * (r * S_new.real + x * S_new.imag) - z2 * l
        v_new = graph.v0 + M @ drop
        bad = np.flatnonzero(v_new <= 0.0)
        if bad.size:
            log.warning("voltage collapse on %s at iteration %d", graph.name, it)
            raise VoltageCollapse(int(bad[0]), float(v_new[bad[0]]), it)

        l_new = np.abs(S_new) ** 2 / v_new
        l_new[0] = 0.0

        delta = max(np.max(np.abs(v_new - v)), np.max(np.abs(S_new - S)))
        v, l, S = v_new, l_new, S_new
        if delta < tol:
            break
    else:
        log.warning("sweep on %s stopped after %d iterations (update %.3e)", graph.name, max_iters, delta)
        raise NotConverged(max_iters, float(delta))

    s0 = -complex(np.sum(S[root_kids] - z[root_kids] * l[root_kids]))
    return ACSolution(
        v=v,
        l=l,
        S=S,
        s0=s0,
        loss_total=float(np.dot(r, l)),
        iterations=it,
        residual=branch_flow_residual(graph, s, v, l, S),
    )


def branch_flow_residual(graph: FeederGraph, s: np.ndarray, v: np.ndarray, l: np.ndarray, S: np.ndarray) -> float:
    """Max violation of the flow balance, voltage drop and current definition equations."""
    topo = graph.topology
    r, x = topo.r, topo.x
    z = r + 1j * x
    idx = np.arange(1, graph.n)
    par = topo.parent[idx]

    inflow = np.zeros(graph.n, dtype=complex)
    np.add.at(inflow, par, S[idx] - z[idx] * l[idx])
    bal = S[idx] - s[idx] - inflow[idx]
    drop = v[idx] - v[par] - 2.0 * (r[idx] * S[idx].real + x[idx] * S[idx].imag) + (r[idx] ** 2 + x[idx] ** 2) * l[idx]
    cur = l[idx] * v[idx] - np.abs(S[idx]) ** 2

    if not idx.size:
        return 0.0
    return float(max(np.max(np.abs(bal)), np.max(np.abs(drop)), np.max(np.abs(cur))))


def head_node_power(sol: ACSolution) -> float:
    """Active power drawn from the substation; negative under reverse flow."""
    return float(sol.s0.real)
