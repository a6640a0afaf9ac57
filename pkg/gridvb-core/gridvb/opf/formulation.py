from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from gridvb.conic.base import ConicProgram, SolverResult
from gridvb.conic.builder import AffineExpr, ProgramBuilder, lin_sum, quadratic_to_soc
from gridvb.opf.model import OPFInput, OPFSolution

log = logging.getLogger(__name__)

P1 = "p1"
P2 = "p2"


@dataclass
class _Vars:
    P: list[list[AffineExpr]]
    Q: list[list[AffineExpr]]
    l: list[list[AffineExpr]]
    v: list[list[AffineExpr]]
    p0: list[AffineExpr]
    q0: list[AffineExpr]
    pb: list[list[AffineExpr]]
    qb: list[list[AffineExpr]]
    B: list[list[AffineExpr]]


def _network(inp: OPFInput, pb_: ProgramBuilder) -> _Vars:
    """Branch-flow equalities, cone relaxation, voltage and VB constraints for every step."""
    g = inp.graph
    topo = g.topology
    n, T = g.n, inp.horizon
    nv = len(inp.vbs)
    vb_at = {bus: i for i, bus in enumerate(inp.vb_bus)}
    r, x = topo.r, topo.x
    z2 = r * r + x * x
    dt_h = inp.dt_min / 60.0

    vs = _Vars([], [], [], [], [], [], [], [], [])
    B_prev: list[AffineExpr | float] = [float(b) for b in inp.b0]
    for k in range(T):
        # index 0 of each list is a placeholder so lists are indexed by bus
        P = [AffineExpr()] + pb_.add_variable(f"P[{k}]", n - 1)
        Q = [AffineExpr()] + pb_.add_variable(f"Q[{k}]", n - 1)
        l = [AffineExpr()] + pb_.add_variable(f"l[{k}]", n - 1)
        v = [AffineExpr({}, g.v0)] + pb_.add_variable(f"v[{k}]", n - 1)
        (p0,) = pb_.add_variable(f"p0[{k}]")
        (q0,) = pb_.add_variable(f"q0[{k}]")
        pb = pb_.add_variable(f"pb[{k}]", nv) if nv else []
        qb = pb_.add_variable(f"qb[{k}]", nv) if (nv and inp.inverter_disc) else []
        B = pb_.add_variable(f"B[{k + 1}]", nv) if nv else []

        for i in range(1, n):
            inflow_p = lin_sum(P[h] - r[h] * l[h] for h in topo.children[i])
            inflow_q = lin_sum(Q[h] - x[h] * l[h] for h in topo.children[i])
            ext_p = inp.p_solar[i, k] - inp.p_load[i, k]
            ext_q = -inp.q_load[i, k]
            flow_p = P[i] - inflow_p
            flow_q = Q[i] - inflow_q
            if i in vb_at:
                flow_p = flow_p - pb[vb_at[i]]
                if qb:
                    flow_q = flow_q - qb[vb_at[i]]
            pb_.eq(flow_p, ext_p)
            pb_.eq(flow_q, ext_q)

            par = int(topo.parent[i])
            pb_.eq(v[i] - v[par] - 2.0 * r[i] * P[i] - 2.0 * x[i] * Q[i] + z2[i] * l[i], 0.0)

            # l v >= P^2 + Q^2
            pb_.soc(l[i] + v[i], [2.0 * P[i], 2.0 * Q[i], l[i] - v[i]])
            bus = g.buses[i]
            pb_.bounds(v[i], bus.v_min, bus.v_max)

        pb_.eq(p0 + lin_sum(P[h] - r[h] * l[h] for h in topo.children[0]), 0.0)
        pb_.eq(q0 + lin_sum(Q[h] - x[h] * l[h] for h in topo.children[0]), 0.0)

        for j, params in enumerate(inp.vbs):
            lo, hi = inp.vb_limits(j)
            if qb:
                s_max = params.p_max if inp.s_max is None else float(inp.s_max[j])
                pb_.soc(s_max, [pb[j], qb[j]])
                if j in inp.pb_fixed:
                    pb_.eq(pb[j], lo)
            elif lo == hi:
                pb_.eq(pb[j], lo)
            else:
                pb_.bounds(pb[j], lo, hi)
            pb_.eq(B[j] - B_prev[j] + dt_h * pb[j], 0.0)
            pb_.bounds(B[j], params.b_min, params.b_max)

        if inp.augment_c2:
            _linear_voltage_caps(inp, pb_, k, pb, qb, vb_at)

        vs.P.append(P)
        vs.Q.append(Q)
        vs.l.append(l)
        vs.v.append(v)
        vs.p0.append(p0)
        vs.q0.append(q0)
        vs.pb.append(pb)
        vs.qb.append(qb)
        vs.B.append(B)
        B_prev = B
    return vs


def _linear_voltage_caps(inp: OPFInput, builder: ProgramBuilder, k: int, pb, qb, vb_at) -> None:
    """v_hat(s) <= v_max at every bus, so any feasible point satisfies the voltage condition."""
    g = inp.graph
    topo = g.topology
    M = topo.path_matrix
    R = 2.0 * (M * topo.r) @ M.T
    X = 2.0 * (M * topo.x) @ M.T
    ext_p = inp.p_solar[:, k] - inp.p_load[:, k]
    ext_q = -inp.q_load[:, k]
    ext_p[0] = ext_q[0] = 0.0
    base = g.v0 + R @ ext_p + X @ ext_q
    for i in range(1, g.n):
        expr = AffineExpr({}, float(base[i]))
        for bus, j in vb_at.items():
            expr = expr + R[i, bus] * pb[j]
            if qb:
                expr = expr + X[i, bus] * qb[j]
        builder.le(expr, g.buses[i].v_max)


def _injection_sum(inp: OPFInput, k: int, pb: list[AffineExpr]) -> AffineExpr:
    ext = float(np.sum(inp.p_solar[1:, k] - inp.p_load[1:, k]))
    return lin_sum(pb) + ext


def build_p1(inp: OPFInput) -> ConicProgram:
    """Conventional relaxation: sum_k (p0 - p0_econ)^2 + (p_vb_econ - sum p_b)^2."""
    builder = ProgramBuilder()
    vs = _network(inp, builder)
    terms = []
    for k in range(inp.horizon):
        f_hn = vs.p0[k] - float(inp.p0_econ[k])
        f_vb = float(inp.p_vb_econ[k]) - lin_sum(vs.pb[k])
        terms.append(quadratic_to_soc(builder, [(1.0, f_hn)], f"t_hn[{k}]"))
        terms.append(quadratic_to_soc(builder, [(1.0, f_vb)], f"t_vb[{k}]"))
    builder.minimize(lin_sum(terms))
    prog = builder.build()
    log.debug("p1 program: %s", prog.stats())
    return prog


def build_p2(inp: OPFInput) -> ConicProgram:
    """Tight reformulation with linearized losses.

    f_HN = p0_econ - (L1 - sum_i p_i), f_VB = p_vb_econ - sum p_b,
    L1 = L0 + sum_i zeta_i (p_i - p_i[0]).
    The objective sum f_HN^2 + alpha f_VB^2 + epsilon p0 is divided by epsilon.
    """
    if inp.p_curtail_econ is not None:
        log.warning("p_curtail_econ is accepted but curtailment variables are not generated")
    builder = ProgramBuilder()
    vs = _network(inp, builder)
    zeta = inp.sensitivities()
    L0 = inp.loss_base()
    p_nom = inp.nominal()
    vb_at = {bus: i for i, bus in enumerate(inp.vb_bus)}
    inv_eps = 1.0 / inp.epsilon

    terms = []
    for k in range(inp.horizon):
        ext = inp.p_solar[:, k] - inp.p_load[:, k]
        L1 = AffineExpr({}, float(L0[k]))
        for i in range(1, inp.graph.n):
            p_i = AffineExpr({}, float(ext[i]))
            if i in vb_at:
                p_i = p_i + vs.pb[k][vb_at[i]]
            L1 = L1 + float(zeta[i]) * (p_i - float(p_nom[i]))
        f_hn = float(inp.p0_econ[k]) - (L1 - _injection_sum(inp, k, vs.pb[k]))
        f_vb = float(inp.p_vb_econ[k]) - lin_sum(vs.pb[k])
        terms.append(quadratic_to_soc(builder, [(inv_eps, f_hn)], f"t_hn[{k}]"))
        terms.append(quadratic_to_soc(builder, [(inp.alpha * inv_eps, f_vb)], f"t_vb[{k}]"))
        terms.append(vs.p0[k])
    builder.minimize(lin_sum(terms))
    prog = builder.build()
    log.debug("p2 program: %s", prog.stats())
    return prog


def build(inp: OPFInput, formulation: str = P2) -> ConicProgram:
    if formulation == P1:
        return build_p1(inp)
    if formulation == P2:
        return build_p2(inp)
    raise ValueError(f"Unknown formulation {formulation!r} (expected p1 or p2)")


def recover(inp: OPFInput, prog: ConicProgram, result: SolverResult, formulation: str = P2) -> OPFSolution:
    g = inp.graph
    n, T, nv = g.n, inp.horizon, len(inp.vbs)
    xs = result.x
    v = np.zeros((T, n))
    l = np.zeros((T, n))
    S = np.zeros((T, n), dtype=complex)
    s0 = np.zeros(T, dtype=complex)
    p_b = np.zeros((T, nv))
    q_b = np.zeros((T, nv))
    B = np.zeros((T + 1, nv))
    B[0] = inp.b0
    for k in range(T):
        v[k, 0] = g.v0
        v[k, 1:] = prog.value(xs, f"v[{k}]")
        l[k, 1:] = prog.value(xs, f"l[{k}]")
        S[k, 1:] = prog.value(xs, f"P[{k}]") + 1j * prog.value(xs, f"Q[{k}]")
        s0[k] = complex(prog.value(xs, f"p0[{k}]")[0], prog.value(xs, f"q0[{k}]")[0])
        if nv:
            p_b[k] = prog.value(xs, f"pb[{k}]")
            B[k + 1] = prog.value(xs, f"B[{k + 1}]")
            if f"qb[{k}]" in prog.names:
                q_b[k] = prog.value(xs, f"qb[{k}]")

    p_inj = (inp.p_solar - inp.p_load).T.copy()
    q_inj = (-inp.q_load).T.copy()
    for j, bus in enumerate(inp.vb_bus):
        p_inj[:, bus] += p_b[:, j]
        q_inj[:, bus] += q_b[:, j]
    p_inj[:, 0] = s0.real
    q_inj[:, 0] = s0.imag

    residuals = np.zeros((T, n))
    residuals[:, 1:] = l[:, 1:] - np.abs(S[:, 1:]) ** 2 / v[:, 1:]

    objective = result.primal_objective
    if formulation == P2:
        objective *= inp.epsilon
    return OPFSolution(
        formulation=formulation,
        p_b=p_b,
        q_b=q_b,
        v=v,
        l=l,
        S=S,
        s0=s0,
        B=B,
        p_inj=p_inj,
        q_inj=q_inj,
        objective=float(objective),
        residuals=residuals,
        result=result,
    )
