from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import networkx as nx
import numpy as np

from gridvb.errors import CycleDetected, DisconnectedBus, MultipleParents

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Bus:
    id: int
    p_load: float = 0.0
    q_load: float = 0.0
    p_solar: float = 0.0
    v_min: float = 0.9025
    v_max: float = 1.1025
    vb_index: int | None = None
    name: str = ""


@dataclass(frozen=True, slots=True)
class Branch:
    """Line between two buses; `to` is the end closer to the head node."""

    frm: int
    to: int
    r: float
    x: float

    @property
    def z2(self) -> float:
        return self.r * self.r + self.x * self.x


@dataclass(frozen=True, slots=True)
class Topology:
    """Cached radial structure. Branch quantities are indexed by their child bus."""

    parent: np.ndarray
    order: tuple[int, ...]
    children: tuple[tuple[int, ...], ...]
    leaves: tuple[int, ...]
    r: np.ndarray
    x: np.ndarray
    path_matrix: np.ndarray

    def path(self, bus: int) -> list[int]:
        """Buses on the path from `bus` up to (excluding) the head node, child side first."""
        out: list[int] = []
        i = bus
        while i > 0:
            out.append(i)
            i = int(self.parent[i])
        return out


@dataclass(frozen=True)
class FeederGraph:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    v0: float = 1.0
    s_base: float = 1e6
    v_base: float = 4.8e3
    name: str = "feeder"

    @property
    def n(self) -> int:
        return len(self.buses)

    @cached_property
    def topology(self) -> Topology:
        return _build_topology(self)

    def by_name(self, name: str) -> int:
        for b in self.buses:
            if b.name == name:
                return b.id
        raise KeyError(name)

    def nominal_injections(self) -> np.ndarray:
        """Per-bus complex injection s = p_solar - p_load - j q_load (VB output excluded)."""
        return np.array([complex(b.p_solar - b.p_load, -b.q_load) for b in self.buses])

    def vb_buses(self) -> list[int]:
        """VB host buses in VB-index order."""
        return [bus for _, bus in sorted((b.vb_index, b.id) for b in self.buses if b.vb_index is not None)]


@dataclass(frozen=True, slots=True)
class LinDistFlowSolution:
    S_hat: np.ndarray
    v_hat: np.ndarray
    s0_hat: complex = 0j
    stats: dict = field(default_factory=dict)


def _build_topology(graph: FeederGraph) -> Topology:
    n = graph.n
    ids = sorted(b.id for b in graph.buses)
    if ids != list(range(n)):
        raise DisconnectedBus([i for i in range(n) if i not in ids] or ids)

    G = nx.MultiGraph()
    G.add_nodes_from(range(n))

    # parallel branches give a bus two parents
    seen: dict[frozenset[int], int] = {}
    for k, br in enumerate(graph.branches):
        if br.frm == br.to:
            raise CycleDetected([(br.frm, br.to)])
        key = frozenset((br.frm, br.to))
        if key in seen:
            raise MultipleParents(br.frm, [br.to], branches=[seen[key], k])
        seen[key] = k
        G.add_edge(br.frm, br.to, r=br.r, x=br.x)

    try:
        cycle = nx.find_cycle(G)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        raise CycleDetected([(int(a), int(b)) for a, b, *_ in cycle])

    reach = nx.node_connected_component(G, 0)
    if len(reach) != n:
        raise DisconnectedBus(sorted(set(range(n)) - reach))

    parent = np.full(n, -1, dtype=int)
    r = np.zeros(n)
    x = np.zeros(n)
    kids: dict[int, list[int]] = defaultdict(list)
    down: list[int] = []
    for p, c in nx.bfs_edges(G, 0):
        parent[c] = p
        data = next(iter(G.get_edge_data(p, c).values()))
        r[c] = data["r"]
        x[c] = data["x"]
        kids[p].append(c)
        down.append(c)

    children = tuple(tuple(sorted(kids[i])) for i in range(n))
    leaves = tuple(i for i in range(1, n) if not children[i])

    # row i marks the branches (by child bus) on the head-to-i path
    M = np.zeros((n, n))
    for c in down:
        M[c] = M[parent[c]]
        M[c, c] = 1.0

    log.debug("feeder %s: %d buses, %d leaves", graph.name, n, len(leaves))
    return Topology(
        parent=parent,
        order=tuple(reversed(down)),
        children=children,
        leaves=leaves,
        r=r,
        x=x,
        path_matrix=M,
    )


def validate_radial(graph: FeederGraph) -> None:
    """Raise unless the branch set is a spanning tree rooted at bus 0.

    On success the parent pointers and leaf-to-root order are cached on the graph.
    """
    _ = graph.topology


def lindistflow(graph: FeederGraph, injections: Sequence[complex]) -> LinDistFlowSolution:
    topo = graph.topology
    s = np.asarray(injections, dtype=complex).copy()
    s[0] = 0.0

    M = topo.path_matrix
    S_hat = M.T @ s
    S_hat[0] = 0.0
    drop = topo.r * S_hat.real + topo.x * S_hat.imag
    v_hat = graph.v0 + 2.0 * (M @ drop)

    return LinDistFlowSolution(
        S_hat=S_hat,
        v_hat=v_hat,
        s0_hat=-complex(s[1:].sum()),
        stats={"max_v_hat": float(v_hat.max()), "argmax": int(v_hat.argmax())},
    )


def loss_sensitivities(graph: FeederGraph, operating_injections: Sequence[complex], h: float = 1e-4) -> np.ndarray:
    """Central-difference dL/dp_i on the AC oracle. Entry 0 is zero."""
    from gridvb.powerflow import solve_ac

    s = np.asarray(operating_injections, dtype=complex)
    zeta = np.zeros(graph.n)
    if not np.any(graph.topology.r):
        return zeta

    for i in range(1, graph.n):
        up = s.copy()
        dn = s.copy()
        up[i] += h
        dn[i] -= h
        zeta[i] = (solve_ac(graph, up).loss_total - solve_ac(graph, dn).loss_total) / (2.0 * h)
    return zeta


def with_vbs(graph: FeederGraph, placement: dict[int, int]) -> FeederGraph:
    """Copy of the graph with VB indices attached to the given buses (bus -> vb index)."""
    if 0 in placement:
        raise ValueError("The head node cannot host a VB")
    buses = tuple(
        Bus(b.id, b.p_load, b.q_load, b.p_solar, b.v_min, b.v_max, placement.get(b.id), b.name)
        for b in graph.buses
    )
    return FeederGraph(buses, graph.branches, graph.v0, graph.s_base, graph.v_base, graph.name)
