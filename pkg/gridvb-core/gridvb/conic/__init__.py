from __future__ import annotations

from gridvb.conic.base import ConeDims, ConicProgram, ConicSolver, SolverResult, SolverStatus
from gridvb.conic.builder import AffineExpr, ProgramBuilder, lin_sum, quadratic_to_soc
from gridvb.conic.ipm import InteriorPointSolver, solve

__all__ = [
    "AffineExpr",
    "ConeDims",
    "ConicProgram",
    "ConicSolver",
    "InteriorPointSolver",
    "ProgramBuilder",
    "SolverResult",
    "SolverStatus",
    "lin_sum",
    "quadratic_to_soc",
    "solve",
]
