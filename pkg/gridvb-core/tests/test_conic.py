from __future__ import annotations

import logging
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import optimize

from gridvb.conic import InteriorPointSolver, ProgramBuilder, SolverStatus, lin_sum, quadratic_to_soc
from gridvb.conic.interchange import dump_program, load_program
from gridvb.errors import ConfigError, NegativeWeight
from gridvb.settings import SolverSettings

rtol = 1e-6


def _solve(prog, kkt: str = "dense"):
    return InteriorPointSolver(SolverSettings(kkt=kkt)).solve(prog)


def test_affine_expressions_combine():
    pb = ProgramBuilder()
    x, y = pb.add_variable("xy", 2)
    e = 2 * x - y / 2 + 3 - x
    assert e.value(np.array([1.0, 4.0])) == pytest.approx(2.0)
    assert (1.0 - e).value(np.array([1.0, 4.0])) == pytest.approx(-1.0)
    assert lin_sum([x, y, 1.0]).value(np.array([2.0, 3.0])) == pytest.approx(6.0)


def test_duplicate_variable_group_is_rejected():
    pb = ProgramBuilder()
    pb.add_variable("x")
    with pytest.raises(ValueError):
        pb.add_variable("x")


def test_linear_program():
    pb = ProgramBuilder()
    x, y = pb.add_variable("xy", 2)
    pb.le(x + y, 1.0)
    pb.ge(x, 0.0)
    pb.ge(y, 0.0)
    pb.le(x, 0.7)
    pb.minimize(-2.0 * x - y)
    prog = pb.build()
    res = _solve(prog)
    assert res.status is SolverStatus.OPTIMAL
    assert res.primal_objective == pytest.approx(-1.7, rel=rtol)
    assert_allclose(prog.value(res.x, "xy"), [0.7, 0.3], atol=1e-6)


def test_distance_to_a_line():
    pb = ProgramBuilder()
    x, y = pb.add_variable("p", 2)
    (t,) = pb.add_variable("t")
    pb.eq(x + y, 0.0)
    pb.soc(t, [x - 1.0, y - 2.0])
    pb.minimize(t)
    res = _solve(pb.build())
    assert res.status is SolverStatus.OPTIMAL
    assert res.primal_objective == pytest.approx(3.0 / math.sqrt(2.0), rel=rtol)


def test_quadratic_epigraph():
    pb = ProgramBuilder()
    (x,) = pb.add_variable("x")
    t = quadratic_to_soc(pb, [(1.0, x - 3.0), (2.0, x)], "t")
    pb.minimize(t)
    prog = pb.build()
    res = _solve(prog)
    # (x-3)^2 + 2 x^2 is smallest at x = 1 with value 6
    assert prog.value(res.x, "x")[0] == pytest.approx(1.0, abs=1e-6)
    assert res.primal_objective == pytest.approx(6.0, rel=rtol)


def test_negative_weight_is_rejected():
    pb = ProgramBuilder()
    (x,) = pb.add_variable("x")
    with pytest.raises(NegativeWeight) as exc:
        quadratic_to_soc(pb, [(1.0, x), (-0.5, x)], "t")
    assert exc.value.index == 1


def test_infeasible_program_is_reported():
    pb = ProgramBuilder()
    (x,) = pb.add_variable("x")
    pb.ge(x, 1.0)
    pb.le(x, 0.0)
    pb.minimize(x)
    assert _solve(pb.build()).status is SolverStatus.INFEASIBLE


def test_inconsistent_equalities_are_infeasible():
    pb = ProgramBuilder()
    (x,) = pb.add_variable("x")
    pb.eq(x, 1.0)
    pb.eq(2 * x, 3.0)
    pb.ge(x, -10.0)
    pb.minimize(x)
    assert _solve(pb.build()).status is SolverStatus.INFEASIBLE


def test_unbounded_program_is_reported():
    pb = ProgramBuilder()
    (x,) = pb.add_variable("x")
    pb.le(x, 1.0)
    pb.minimize(x)
    assert _solve(pb.build()).status is SolverStatus.UNBOUNDED


def _random_socp(seed: int, n: int = 4, blocks: int = 3):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=n)
    cones = []
    for _ in range(blocks):
        F = rng.normal(size=(2, n))
        g = rng.normal(size=2) * 0.3
        f = rng.normal(size=n) * 0.2
        d = float(np.linalg.norm(g)) + 1.0
        cones.append((F, g, f, d))
    return c, cones


def _build_socp(c, cones):
    pb = ProgramBuilder()
    xs = pb.add_variable("x", len(c))
    for F, g, f, d in cones:
        head = lin_sum([float(f[j]) * xs[j] for j in range(len(c))] + [d])
        tail = [lin_sum([float(F[i, j]) * xs[j] for j in range(len(c))] + [float(g[i])]) for i in range(2)]
        pb.soc(head, tail)
    for xj in xs:
        pb.bounds(xj, -1.0, 1.0)
    pb.minimize(lin_sum([float(c[j]) * xs[j] for j in range(len(c))]))
    return pb.build()


def _slsqp_reference(c, cones) -> float:
    cons = [
        {"type": "ineq", "fun": (lambda x, F=F, g=g, f=f, d=d: f @ x + d - np.linalg.norm(F @ x + g))}
        for F, g, f, d in cones
    ]
    best = math.inf
    for start in (np.zeros(len(c)), -0.1 * np.sign(c)):
        res = optimize.minimize(
            lambda x: c @ x, start, method="SLSQP", constraints=cons, bounds=[(-1, 1)] * len(c),
            options={"ftol": 1e-12, "maxiter": 500},
        )
        if res.success:
            best = min(best, float(res.fun))
    return best


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_random_socp_matches_slsqp(seed):
    c, cones = _random_socp(seed)
    res = _solve(_build_socp(c, cones))
    assert res.status is SolverStatus.OPTIMAL
    assert res.primal_objective == pytest.approx(_slsqp_reference(c, cones), rel=1e-5, abs=1e-6)


def test_sparse_and_dense_kkt_agree():
    c, cones = _random_socp(7, n=6, blocks=4)
    prog = _build_socp(c, cones)
    dense = _solve(prog, "dense")
    sparse = _solve(prog, "sparse")
    assert sparse.status is SolverStatus.OPTIMAL
    assert sparse.primal_objective == pytest.approx(dense.primal_objective, rel=1e-6, abs=1e-8)


def test_program_survives_interchange(tmp_path):
    c, cones = _random_socp(5)
    prog = _build_socp(c, cones)
    back = load_program(dump_program(prog, tmp_path / "prog.json"))
    assert back.dims == prog.dims
    assert back.names == prog.names
    assert _solve(back).primal_objective == pytest.approx(_solve(prog).primal_objective, rel=1e-8)


def test_interchange_rejects_foreign_documents(tmp_path):
    path = tmp_path / "other.json"
    path.write_text('{"format": "something-else"}', encoding="utf-8")
    with pytest.raises(ConfigError):
        load_program(path)


def test_program_stats_count_blocks():
    c, cones = _random_socp(1, n=3, blocks=2)
    stats = _build_socp(c, cones).stats()
    assert stats["soc_blocks"] == 2
    assert stats["orthant_rows"] == 6
    assert stats["cone_rows"] == 6 + 2 * 3


def test_repeated_solves_are_bit_identical(caplog):
    prog = _build_socp(*_random_socp(3, n=6, blocks=4))
    runs = []
    for _ in range(2):
        caplog.clear()
        with caplog.at_level(logging.DEBUG, logger="gridvb.conic.ipm"):
            res = _solve(prog)
        trace = [r.getMessage() for r in caplog.records if r.getMessage().startswith("it ")]
        runs.append((res, trace))
    (a, trace_a), (b, trace_b) = runs
    assert trace_a and trace_a == trace_b
    assert a.iterations == b.iterations
    for name in ("x", "y", "z", "s"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_iteration_limit_returns_best_finite_point():
    prog = _build_socp(*_random_socp(0))
    res = InteriorPointSolver(SolverSettings(max_iters=3)).solve(prog)
    assert res.status is SolverStatus.ITER_LIMIT
    assert np.all(np.isfinite(res.x))
    assert np.isfinite(res.residual())
    assert res.iterations <= 3


def test_unreachable_tolerance_stops_on_stall():
    prog = _build_socp(*_random_socp(1))
    res = InteriorPointSolver(SolverSettings(tol=1e-30, stall_iters=4)).solve(prog)
    assert res.status is SolverStatus.ITER_LIMIT
    assert res.iterations < 200
    assert np.isfinite(res.residual())
    assert res.residual() <= 1e-6
