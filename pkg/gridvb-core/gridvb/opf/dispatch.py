from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gridvb.conic.base import SolverStatus
from gridvb.conic.ipm import InteriorPointSolver
from gridvb.errors import NumericalFailure, SolverFailed
from gridvb.network import FeederGraph, loss_sensitivities
from gridvb.opf.certificates import certify
from gridvb.opf.formulation import P2, build, recover
from gridvb.opf.model import ExactnessReport, OPFInput, OPFSolution
from gridvb.powerflow import solve_ac
from gridvb.settings import OPFSettings
from gridvb.vb import VBParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DispatchResult:
    solution: OPFSolution | None
    report: ExactnessReport | None
    setpoints: np.ndarray
    degraded: bool = False
    status: str = SolverStatus.OPTIMAL.value
    elapsed_s: float = 0.0


def operating_point_input(
    graph: FeederGraph,
    vbs: Sequence[VBParams],
    b0: Sequence[float],
    p_b_now: Sequence[float],
    p0_econ: Sequence[float],
    p_vb_econ: Sequence[float],
    settings: OPFSettings,
    p_load: np.ndarray | None = None,
    q_load: np.ndarray | None = None,
    p_solar: np.ndarray | None = None,
    pb_fixed: dict[int, float] | None = None,
) -> OPFInput:
    """Build a dispatch input around the current operating point.

    Forecasts default to the graph's nominal loads held over the horizon. L0, zeta and
    the nominal injections come from one AC solve at (forecast[:, 0], p_b_now).
    """
    T = len(p0_econ)
    n = graph.n
    if p_load is None:
        p_load = np.repeat([[b.p_load] for b in graph.buses], T, axis=1)
    if q_load is None:
        q_load = np.repeat([[b.q_load] for b in graph.buses], T, axis=1)
    if p_solar is None:
        p_solar = np.repeat([[b.p_solar] for b in graph.buses], T, axis=1)

    s = (p_solar[:, 0] - p_load[:, 0]) - 1j * q_load[:, 0]
    s = s.astype(complex)
    vb_bus = graph.vb_buses()
    for j, bus in enumerate(vb_bus):
        s[bus] += float(p_b_now[j])
    s[0] = 0.0

    ac = solve_ac(graph, s)
    zeta = loss_sensitivities(graph, s, h=settings.fd_step)
    log.debug("operating point on %s: p0=%.5f loss=%.3e", graph.name, ac.s0.real, ac.loss_total)

    return OPFInput(
        graph=graph,
        vbs=tuple(vbs),
        b0=np.asarray(b0, dtype=float),
        p0_econ=np.asarray(p0_econ, dtype=float),
        p_vb_econ=np.asarray(p_vb_econ, dtype=float),
        p_load=np.asarray(p_load, dtype=float).reshape(n, T),
        q_load=np.asarray(q_load, dtype=float).reshape(n, T),
        p_solar=np.asarray(p_solar, dtype=float).reshape(n, T),
        alpha=settings.alpha,
        epsilon=settings.epsilon,
        dt_min=settings.dt_min,
        L0=np.full(T, ac.loss_total),
        zeta=zeta,
        p_nominal=s.real.copy(),
        pb_fixed=dict(pb_fixed or {}),
        inverter_disc=settings.inverter_disc,
        augment_c2=settings.augment_c2,
    )


def solve_opf(inp: OPFInput, settings: OPFSettings, formulation: str = P2) -> OPFSolution:
    """Build, solve and recover one program. Raises SolverFailed unless the point is usable."""
    prog = build(inp, formulation)
    result = InteriorPointSolver(settings.solver).solve(prog)
    usable = result.optimal or (
        result.status is SolverStatus.ITER_LIMIT and result.residual() <= settings.accept_tol
    )
    if not usable:
        raise SolverFailed(result.status.value, result)
    if not result.optimal:
        log.info("accepting %s point with residual %.2e", result.status.value, result.residual())
    return recover(inp, prog, result, formulation)


def dispatch_round(
    inp: OPFInput,
    settings: OPFSettings | None = None,
    previous_setpoints: Sequence[float] | None = None,
    formulation: str = P2,
) -> DispatchResult:
    """Solve the tight program, certify it and extract the first-step VB setpoints.

    On solver failure or a numerical breakdown the previous setpoints are returned with
    degraded=True; without previous setpoints the error propagates.
    """
    settings = settings or OPFSettings()
    t0 = time.perf_counter()
    try:
        solution = solve_opf(inp, settings, formulation)
    except (SolverFailed, NumericalFailure) as exc:
        if previous_setpoints is None:
            raise
        status = exc.status if isinstance(exc, SolverFailed) else "numerical_failure"
        log.warning("dispatch on %s degraded (%s); keeping previous setpoints", inp.graph.name, status)
        return DispatchResult(
            solution=None,
            report=None,
            setpoints=np.asarray(previous_setpoints, dtype=float).copy(),
            degraded=True,
            status=status,
            elapsed_s=time.perf_counter() - t0,
        )

    report = certify(inp, solution, settings.tightness_tol)
    elapsed = time.perf_counter() - t0
    log.info(
        "dispatch on %s: objective %.6g, C1 %s, C2 %s, residual %.2e, %.2fs",
        inp.graph.name,
        solution.objective,
        report.c1_holds,
        report.c2_holds,
        report.max_residual,
        elapsed,
    )
    return DispatchResult(
        solution=solution,
        report=report,
        setpoints=solution.setpoints,
        status=solution.result.status.value if solution.result else SolverStatus.OPTIMAL.value,
        elapsed_s=elapsed,
    )
