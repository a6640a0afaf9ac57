from __future__ import annotations

from gridvb.opf.certificates import c2_sweep, certify, check_c1, check_c2, project_to_ac, verify_tightness
from gridvb.opf.dispatch import DispatchResult, dispatch_round, operating_point_input, solve_opf
from gridvb.opf.formulation import P1, P2, build, build_p1, build_p2, recover
from gridvb.opf.model import C1Result, C2Result, ExactnessReport, OPFInput, OPFSolution

__all__ = [
    "P1",
    "P2",
    "C1Result",
    "C2Result",
    "DispatchResult",
    "ExactnessReport",
    "OPFInput",
    "OPFSolution",
    "build",
    "build_p1",
    "build_p2",
    "c2_sweep",
    "certify",
    "check_c1",
    "check_c2",
    "dispatch_round",
    "operating_point_input",
    "project_to_ac",
    "recover",
    "solve_opf",
    "verify_tightness",
]
