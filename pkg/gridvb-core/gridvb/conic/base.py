from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
import scipy.sparse as sp


class SolverStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITER_LIMIT = "iter_limit"


@dataclass(frozen=True, slots=True)
class ConeDims:
    """Slack cone K = R+^l x Q^q[0] x Q^q[1] x ..., in that order."""

    l: int = 0
    q: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return self.l + sum(self.q)

    @property
    def degree(self) -> int:
        return self.l + len(self.q)


@dataclass(frozen=True)
class ConicProgram:
    """min c'x + offset  s.t.  Gx + s = h,  Ax = b,  s in K(dims).

    x is free; the cone blocks partition the slack vector s. G and A may be dense
    arrays or scipy sparse matrices. `names` maps variable groups to slices of x.
    """

    c: np.ndarray
    G: Any
    h: np.ndarray
    A: Any
    b: np.ndarray
    dims: ConeDims
    names: dict[str, slice] = field(default_factory=dict)
    offset: float = 0.0

    @property
    def n(self) -> int:
        return int(self.c.shape[0])

    def G_dense(self) -> np.ndarray:
        return self.G.toarray() if sp.issparse(self.G) else np.asarray(self.G, dtype=float)

    def A_dense(self) -> np.ndarray:
        return self.A.toarray() if sp.issparse(self.A) else np.asarray(self.A, dtype=float)

    def value(self, x: np.ndarray, name: str) -> np.ndarray:
        return x[self.names[name]]

    def stats(self) -> dict[str, int]:
        return {
            "variables": self.n,
            "equalities": int(self.b.shape[0]),
            "orthant_rows": self.dims.l,
            "soc_blocks": len(self.dims.q),
            "cone_rows": self.dims.size,
        }


@dataclass(frozen=True, slots=True)
class SolverResult:
    status: SolverStatus
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    primal_objective: float = float("nan")
    dual_objective: float = float("nan")
    gap: float = float("nan")
    relative_gap: float = float("nan")
    primal_infeasibility: float = float("nan")
    dual_infeasibility: float = float("nan")
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is SolverStatus.OPTIMAL

    def residual(self) -> float:
        return max(self.primal_infeasibility, self.dual_infeasibility)

    def summary(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "primal objective": self.primal_objective,
            "dual objective": self.dual_objective,
            "gap": self.gap,
            "relative gap": self.relative_gap,
            "primal infeasibility": self.primal_infeasibility,
            "dual infeasibility": self.dual_infeasibility,
            "iterations": self.iterations,
        }


class ConicSolver(ABC):
    """Solver contract used by the OPF layer.

    Responsibilities:
      - accept a ConicProgram and a tolerance
      - return a SolverResult; never raise for infeasible or unbounded programs
      - raise NumericalFailure only when the linear algebra breaks down
    """

    @abstractmethod
    def solve(self, prog: ConicProgram, tol: float = 1e-8) -> SolverResult:
        raise NotImplementedError
