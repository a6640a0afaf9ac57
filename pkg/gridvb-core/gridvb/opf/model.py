from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from gridvb.conic.base import SolverResult
from gridvb.errors import InfeasibleBounds
from gridvb.network import FeederGraph
from gridvb.vb import VBParams


@dataclass(frozen=True)
class OPFInput:
    """One multi-period dispatch problem.

    Per-bus forecasts are (n, T) arrays in pu. VB i sits at bus `vb_bus[i]` with
    parameters `vbs[i]` and initial energy `b0[i]` (pu*h).
    """

    graph: FeederGraph
    vbs: tuple[VBParams, ...]
    b0: np.ndarray
    p0_econ: np.ndarray
    p_vb_econ: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray
    p_solar: np.ndarray
    alpha: float = 1.0
    epsilon: float = 1e-6
    dt_min: float = 1.0
    L0: np.ndarray | None = None
    zeta: np.ndarray | None = None
    p_nominal: np.ndarray | None = None
    s_max: np.ndarray | None = None
    pb_fixed: dict[int, float] = field(default_factory=dict)
    inverter_disc: bool = False
    augment_c2: bool = False
    p_curtail_econ: np.ndarray | None = None

    def __post_init__(self) -> None:
        n, T = self.graph.n, self.horizon
        if T < 1:
            raise InfeasibleBounds("horizon must be at least one step")
        if self.epsilon <= 0:
            raise InfeasibleBounds(f"epsilon must be positive, got {self.epsilon}")
        if self.alpha < 0:
            raise InfeasibleBounds(f"alpha must be nonnegative, got {self.alpha}")
        for name in ("p_load", "q_load", "p_solar"):
            arr = getattr(self, name)
            if np.shape(arr) != (n, T):
                raise InfeasibleBounds(f"{name} has shape {np.shape(arr)}, expected {(n, T)}")
        if np.shape(self.p_vb_econ) != (T,):
            raise InfeasibleBounds(f"p_vb_econ has shape {np.shape(self.p_vb_econ)}, expected {(T,)}")
        if len(self.vbs) != len(self.vb_bus) or np.shape(self.b0) != (len(self.vbs),):
            raise InfeasibleBounds("VB parameter, placement and initial energy counts differ")
        for i, (p, b) in enumerate(zip(self.vbs, self.b0)):
            if not p.b_min <= b <= p.b_max:
                raise InfeasibleBounds(f"VB {i}: initial energy {b} outside [{p.b_min}, {p.b_max}]")
        for i, val in self.pb_fixed.items():
            if not 0 <= i < len(self.vbs):
                raise InfeasibleBounds(f"pb_fixed names unknown VB {i}")
        for b in self.graph.buses:
            if b.v_min > b.v_max:
                raise InfeasibleBounds(f"bus {b.id}: v_min above v_max")
        if self.graph.v0 > self.graph.buses[0].v_max or self.graph.v0 < self.graph.buses[0].v_min:
            raise InfeasibleBounds("head-node voltage outside its own bounds")

    @property
    def horizon(self) -> int:
        return int(np.shape(self.p0_econ)[0])

    @property
    def vb_bus(self) -> tuple[int, ...]:
        placed = sorted((b.vb_index, b.id) for b in self.graph.buses if b.vb_index is not None)
        return tuple(bus for _, bus in placed)

    def loss_base(self) -> np.ndarray:
        T = self.horizon
        if self.L0 is None:
            return np.zeros(T)
        return np.broadcast_to(np.asarray(self.L0, dtype=float), (T,)).copy()

    def sensitivities(self) -> np.ndarray:
        return np.zeros(self.graph.n) if self.zeta is None else np.asarray(self.zeta, dtype=float)

    def nominal(self) -> np.ndarray:
        if self.p_nominal is None:
            return (self.p_solar[:, 0] - self.p_load[:, 0]).astype(float)
        return np.asarray(self.p_nominal, dtype=float)

    def vb_limits(self, i: int) -> tuple[float, float]:
        if i in self.pb_fixed:
            v = self.pb_fixed[i]
            return v, v
        return self.vbs[i].p_min, self.vbs[i].p_max


@dataclass(frozen=True)
class OPFSolution:
    """Recovered trajectory. Arrays are (T, n) per bus/branch, (T, nv) per VB,
    B is (T + 1, nv) including the initial energy. Branch entries are indexed by child bus."""

    formulation: str
    p_b: np.ndarray
    q_b: np.ndarray
    v: np.ndarray
    l: np.ndarray
    S: np.ndarray
    s0: np.ndarray
    B: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    objective: float
    residuals: np.ndarray
    result: SolverResult | None = None

    @property
    def setpoints(self) -> np.ndarray:
        return self.p_b[0].copy()

    @property
    def p0(self) -> np.ndarray:
        return self.s0.real.copy()

    @property
    def horizon(self) -> int:
        return int(self.p_b.shape[0])

    def losses(self, graph: FeederGraph) -> np.ndarray:
        return self.l @ graph.topology.r


@dataclass(frozen=True, slots=True)
class C1Result:
    holds: bool
    min_entry: float
    leaf: int
    path: tuple[int, ...]
    s: int
    t: int


@dataclass(frozen=True, slots=True)
class C2Result:
    holds: bool
    max_v_hat: float
    bus: int
    step: int
    margin: float


@dataclass(frozen=True)
class ExactnessReport:
    c1: C1Result
    c2: C2Result
    max_residual: float
    residual_map: dict[tuple[int, int], float] = field(default_factory=dict)
    tol: float = 1e-6

    @property
    def c1_holds(self) -> bool:
        return self.c1.holds

    @property
    def c2_holds(self) -> bool:
        return self.c2.holds

    @property
    def exact(self) -> bool:
        return self.max_residual <= self.tol

    def to_dict(self) -> dict[str, Any]:
        return {
            "c1_holds": self.c1.holds,
            "c1_min_entry": self.c1.min_entry,
            "c1_witness": {"leaf": self.c1.leaf, "path": list(self.c1.path), "s": self.c1.s, "t": self.c1.t},
            "c2_holds": self.c2.holds,
            "c2_max_v_hat": self.c2.max_v_hat,
            "c2_bus": self.c2.bus,
            "c2_step": self.c2.step,
            "c2_margin": self.c2.margin,
            "max_residual": self.max_residual,
            "exact": self.exact,
            "tol": self.tol,
        }
