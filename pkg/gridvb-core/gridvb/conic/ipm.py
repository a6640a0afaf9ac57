from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gridvb.conic.base import ConicProgram, ConicSolver, SolverResult, SolverStatus
from gridvb.conic.cones import ConeLayout, NTScaling
from gridvb.errors import NumericalFailure
from gridvb.settings import SolverSettings

log = logging.getLogger(__name__)

REG = 1e-11
MIN_STEP = 1e-10
STALL_DECREASE = 1e-2


@dataclass(frozen=True, slots=True)
class Presolved:
    A: sp.csr_matrix
    b: np.ndarray
    kept: np.ndarray
    infeasible: bool = False


def presolve(A, b: np.ndarray, tol: float = 1e-12) -> Presolved:
    """Drop zero and duplicate equality rows. Inconsistent copies mark the program infeasible."""
    A = sp.csr_matrix(A)
    seen: dict[tuple, float] = {}
    kept: list[int] = []
    infeasible = False
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        idx = A.indices[lo:hi]
        val = A.data[lo:hi]
        nz = np.abs(val) > tol
        idx, val = idx[nz], val[nz]
        if idx.size == 0:
            if abs(b[i]) > tol * max(1.0, float(np.abs(b).max(initial=0.0))):
                infeasible = True
            continue
        order = np.argsort(idx)
        idx, val = idx[order], val[order]
        scale = val[0]
        key = (tuple(idx.tolist()), tuple(np.round(val / scale, 12).tolist()))
        rhs = b[i] / scale
        if key in seen:
            if abs(seen[key] - rhs) > 1e-9 * max(1.0, abs(rhs)):
                infeasible = True
            continue
        seen[key] = rhs
        kept.append(i)
    keep = np.asarray(kept, dtype=int)
    return Presolved(A=A[keep], b=b[keep], kept=keep, infeasible=infeasible)


class _KKT:
    """KKT system A'dy + G'dz = bx, A dx = by, G dx - W^2 dz = bz.

    Factored in reduced form [[G'W^-2G + dI, A'], [A, -dI]]. Iterative refinement
    measures residuals on the unreduced equations.
    """

    def __init__(self, G, A, sparse: bool, refinement: int) -> None:
        self.G = G
        self.A = A
        self.sparse = sparse
        self.refinement = refinement
        self.n = G.shape[1]
        self.p = A.shape[0]
        self.W: NTScaling | None = None

    def factor(self, Winv, W: NTScaling | None = None) -> None:
        WG = Winv @ self.G
        if self.sparse:
            H = sp.csc_matrix(WG.T @ WG)
            K0 = sp.bmat([[H, self.A.T], [self.A, None]], format="csc") if self.p else H
            reg = sp.diags(np.r_[np.full(self.n, REG), np.full(self.p, -REG)], format="csc")
            try:
                self.lu = spla.splu((K0 + reg).tocsc())
            except RuntimeError as e:
                raise NumericalFailure("KKT factorization failed", {"error": str(e)}) from None
        else:
            WG = np.asarray(WG)
            H = WG.T @ WG
            K0 = np.block([[H, self.A.T], [self.A, np.zeros((self.p, self.p))]]) if self.p else H
            Kr = K0 + np.diag(np.r_[np.full(self.n, REG), np.full(self.p, -REG)])
            if not np.all(np.isfinite(Kr)):
                raise NumericalFailure("KKT matrix has non-finite entries")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", la.LinAlgWarning)
                self.lu = la.lu_factor(Kr, check_finite=False)
            pivots = np.abs(np.diag(self.lu[0]))
            if pivots.min() == 0.0:
                raise NumericalFailure("KKT factorization failed", {"zero pivot": int(pivots.argmin())})
        self.Winv = Winv
        self.W = W

    def _solve_reduced(self, r: np.ndarray) -> np.ndarray:
        if self.sparse:
            return self.lu.solve(r)
        return la.lu_solve(self.lu, r, check_finite=False)

    def _solve_once(self, bx: np.ndarray, by: np.ndarray, bz: np.ndarray):
        W2inv_bz = self.Winv.T @ (self.Winv @ bz)
        sol = self._solve_reduced(np.r_[bx + self.G.T @ W2inv_bz, by])
        dx, dy = sol[: self.n], sol[self.n :]
        dz = self.Winv.T @ (self.Winv @ (self.G @ dx - bz))
        return dx, dy, dz

    def _residual(self, bx, by, bz, dx, dy, dz):
        w2dz = dz if self.W is None else self.W.apply(self.W.apply(dz))
        return bx - self.A.T @ dy - self.G.T @ dz, by - self.A @ dx, bz - self.G @ dx + w2dz

    def solve(self, bx: np.ndarray, by: np.ndarray, bz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dx, dy, dz = self._solve_once(bx, by, bz)
        res = self._residual(bx, by, bz, dx, dy, dz)
        err = _norm(res)
        for _ in range(self.refinement):
            if not err > 0.0:
                break
            cx, cy, cz = self._solve_once(*res)
            trial = (dx + cx, dy + cy, dz + cz)
            trial_res = self._residual(bx, by, bz, *trial)
            trial_err = _norm(trial_res)
            if not trial_err < err:
                break
            (dx, dy, dz), res, err = trial, trial_res, trial_err
        if not (np.isfinite(err) and np.all(np.isfinite(dx)) and np.all(np.isfinite(dz))):
            raise NumericalFailure("KKT solve produced non-finite values")
        return dx, dy, dz


def _norm(parts) -> float:
    return float(max((np.linalg.norm(v, np.inf) for v in parts if v.size), default=0.0))


@dataclass(slots=True)
class _Iterate:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    tau: float
    kappa: float

    def copy(self) -> "_Iterate":
        return _Iterate(self.x.copy(), self.y.copy(), self.z.copy(), self.s.copy(), self.tau, self.kappa)


class InteriorPointSolver(ConicSolver):
    """Homogeneous self-dual primal-dual interior-point method.

    Nesterov-Todd scaling with a Mehrotra predictor-corrector step. The KKT system is
    factored densely by default, or with scipy's sparse LU when settings.kkt == "sparse".

    Responsibilities:
      - stop at OPTIMAL, INFEASIBLE or UNBOUNDED once the tolerance is met
      - otherwise return the iterate with the smallest residual as ITER_LIMIT, after
        max_iters, after stall_iters iterations without progress, on a collapsed step,
        or when the KKT system breaks down past the first iteration
    """

    def __init__(self, settings: SolverSettings | None = None) -> None:
        self.settings = settings or SolverSettings()

    def solve(self, prog: ConicProgram, tol: float | None = None) -> SolverResult:
        cfg = self.settings
        tol = cfg.tol if tol is None else tol
        sparse = cfg.kkt == "sparse"

        pre = presolve(prog.A, prog.b)
        if pre.infeasible:
            log.info("presolve found inconsistent equality rows")
            n, m = prog.n, prog.dims.size
            return SolverResult(
                SolverStatus.INFEASIBLE, np.zeros(n), np.zeros(prog.b.shape[0]), np.zeros(m), np.zeros(m)
            )

        c = np.asarray(prog.c, dtype=float)
        h = np.asarray(prog.h, dtype=float)
        b = pre.b
        if sparse:
            G = sp.csr_matrix(prog.G)
            A = pre.A
        else:
            G = prog.G_dense()
            A = pre.A.toarray()

        layout = ConeLayout(prog.dims)
        n, m, p = c.shape[0], layout.m, b.shape[0]
        if G.shape != (m, n):
            raise ValueError(f"G has shape {G.shape}, expected {(m, n)}")

        kkt = _KKT(G, A, sparse, cfg.refinement)
        e = layout.identity()
        nrm_b = max(1.0, float(np.linalg.norm(b)))
        nrm_c = max(1.0, float(np.linalg.norm(c)))
        nrm_h = max(1.0, float(np.linalg.norm(h)))

        # starting point from two least-squares solves with W = I
        eye = sp.identity(m, format="csr") if sparse else np.eye(m)
        kkt.factor(eye)
        x, _, zs = kkt.solve(np.zeros(n), b, h)
        s = -zs
        _, y, z = kkt.solve(-c, np.zeros(p), np.zeros(m))
        for v in (s, z):
            t = layout.boundary_shift(v)
            if t >= -1e-8 * max(1.0, float(np.linalg.norm(v))):
                v += (1.0 + t) * e
        tau, kappa = 1.0, 1.0

        stats: dict = {}
        status = SolverStatus.ITER_LIMIT
        best: _Iterate | None = None
        best_stats: dict = {}
        best_merit = np.inf
        best_progress = np.inf
        stalled = 0
        it = 0
        for it in range(cfg.max_iters + 1):
            rx = A.T @ y + G.T @ z + c * tau
            ry = b * tau - A @ x
            rz = s + G @ x - h * tau
            rt = kappa + c @ x + b @ y + h @ z
            mu = (s @ z + tau * kappa) / (layout.degree + 1)

            stats = _measures(x, y, z, s, tau, A, G, b, c, h, nrm_b, nrm_c, nrm_h)
            log.debug(
                "it %d pcost %.6e dcost %.6e gap %.2e pres %.2e dres %.2e",
                it, stats["pcost"], stats["dcost"], stats["gap"], stats["pres"], stats["dres"],
            )
            if stats["pres"] <= tol and stats["dres"] <= tol and (stats["relgap"] <= tol or stats["gap"] <= tol):
                status = SolverStatus.OPTIMAL
                break
            # certificates only once the embedding leans toward kappa
            if tau < kappa and stats["pinf"] is not None and stats["pinf"] <= tol:
                status = SolverStatus.INFEASIBLE
                break
            if tau < kappa and stats["dinf"] is not None and stats["dinf"] <= tol:
                status = SolverStatus.UNBOUNDED
                break

            merit = max(stats["pres"], stats["dres"], min(stats["gap"], stats["relgap"]))
            if merit < best_merit:
                best_merit = merit
                best, best_stats = _Iterate(x, y, z, s, tau, kappa).copy(), stats
            # progress toward a certificate also counts
            progress = min(
                merit,
                np.inf if stats["pinf"] is None else stats["pinf"],
                np.inf if stats["dinf"] is None else stats["dinf"],
            )
            if progress < (1.0 - STALL_DECREASE) * best_progress:
                best_progress = progress
                stalled = 0
            else:
                stalled += 1
                if stalled >= cfg.stall_iters:
                    log.info("no progress for %d iterations; stopping at residual %.2e", stalled, best_merit)
                    break
            if it == cfg.max_iters:
                break

            try:
                W = NTScaling(layout, s, z)
                lam = W.lam
                kkt.factor(W.inv_matrix(), W)
                x1, y1, z1 = kkt.solve(-c, b, h)
            except NumericalFailure as exc:
                if it == 0:
                    detail = {**exc.diagnostics, "iteration": it, "mu": mu}
                    raise NumericalFailure(str(exc).splitlines()[0], detail) from None
                log.warning("KKT breakdown at iteration %d (mu %.2e); returning best iterate", it, mu)
                break
            denom1 = c @ x1 + b @ y1 + h @ z1 - kappa / tau

            def direction(sigma: float, ds_target: np.ndarray, dk_target: float):
                u = layout.divide(lam, -ds_target)
                x2, y2, z2 = kkt.solve(-(1 - sigma) * rx, (1 - sigma) * ry, -(1 - sigma) * rz - W.apply(u))
                dtau = (-(1 - sigma) * rt + dk_target / tau - (c @ x2 + b @ y2 + h @ z2)) / denom1
                dx = x2 + dtau * x1
                dy = y2 + dtau * y1
                dz = z2 + dtau * z1
                ds = W.apply(u - W.apply(dz))
                dkappa = (-dk_target - kappa * dtau) / tau
                return dx, dy, dz, ds, dtau, dkappa

            def step_to_boundary(dz, ds, dtau, dkappa) -> float:
                amax = min(layout.max_step(s, ds), layout.max_step(z, dz))
                if dtau < 0:
                    amax = min(amax, -tau / dtau)
                if dkappa < 0:
                    amax = min(amax, -kappa / dkappa)
                return amax

            try:
                # predictor
                lam_sq = layout.product(lam, lam)
                aff = direction(0.0, lam_sq, tau * kappa)
                alpha_aff = min(1.0, step_to_boundary(aff[2], aff[3], aff[4], aff[5]))
                sigma = (1.0 - alpha_aff) ** 3

                # corrector
                corr = layout.product(W.apply_inv(aff[3]), W.apply(aff[2]))
                ds_target = lam_sq + corr - sigma * mu * e
                dk_target = tau * kappa + aff[4] * aff[5] - sigma * mu
                dx, dy, dz, ds, dtau, dkappa = direction(sigma, ds_target, dk_target)
            except NumericalFailure:
                log.warning("KKT breakdown at iteration %d (mu %.2e); returning best iterate", it, mu)
                break
            alpha = min(1.0, cfg.step_fraction * step_to_boundary(dz, ds, dtau, dkappa))
            if not alpha > MIN_STEP:
                log.info("step length collapsed to %.2e at iteration %d", alpha, it)
                break

            x = x + alpha * dx
            y = y + alpha * dy
            z = z + alpha * dz
            s = s + alpha * ds
            tau += alpha * dtau
            kappa += alpha * dkappa
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z)) and np.isfinite(tau) and tau > 0):
                log.warning("iterate became non-finite at iteration %d; returning best iterate", it)
                break

        if status is SolverStatus.ITER_LIMIT and best is not None:
            x, y, z, s, tau, kappa = best.x, best.y, best.z, best.s, best.tau, best.kappa
            stats = best_stats

        # full-length duals including rows removed by presolve
        y_full = np.zeros(prog.b.shape[0])
        y_full[pre.kept] = y

        if status is SolverStatus.INFEASIBLE:
            scale = -(h @ z + b @ y)
            xr, yr, zr, sr = x, y_full / scale, z / scale, s
        elif status is SolverStatus.UNBOUNDED:
            scale = -(c @ x)
            xr, yr, zr, sr = x / scale, y_full, z, s / scale
        else:
            xr, yr, zr, sr = x / tau, y_full / tau, z / tau, s / tau

        log.info(
            "cone solve: %s after %d iterations (pcost %.6e, relgap %.2e)",
            status.value, it, stats.get("pcost", float("nan")), stats.get("relgap", float("nan")),
        )
        return SolverResult(
            status=status,
            x=xr,
            y=yr,
            z=zr,
            s=sr,
            primal_objective=stats["pcost"] + prog.offset,
            dual_objective=stats["dcost"] + prog.offset,
            gap=stats["gap"],
            relative_gap=stats["relgap"],
            primal_infeasibility=stats["pres"],
            dual_infeasibility=stats["dres"],
            iterations=it,
        )


def _measures(x, y, z, s, tau, A, G, b, c, h, nrm_b, nrm_c, nrm_h) -> dict:
    cx = float(c @ x)
    by_hz = float(b @ y + h @ z)
    pcost = cx / tau
    dcost = -by_hz / tau
    gap = float(s @ z) / tau**2
    relgap = gap / max(1.0, abs(pcost), abs(dcost))

    pres = max(
        float(np.linalg.norm(A @ x - b * tau)) / (tau * nrm_b),
        float(np.linalg.norm(G @ x + s - h * tau)) / (tau * nrm_h),
    )
    dres = float(np.linalg.norm(A.T @ y + G.T @ z + c * tau)) / (tau * nrm_c)

    pinf = None
    if -by_hz > 0:
        pinf = float(np.linalg.norm(A.T @ y + G.T @ z)) / nrm_c / -by_hz
    dinf = None
    if -cx > 0:
        dinf = max(float(np.linalg.norm(A @ x)) / nrm_b, float(np.linalg.norm(G @ x + s)) / nrm_h) / -cx
    return {
        "pcost": pcost,
        "dcost": dcost,
        "gap": gap,
        "relgap": relgap,
        "pres": pres,
        "dres": dres,
        "pinf": pinf,
        "dinf": dinf,
    }


def solve(prog: ConicProgram, tol: float = 1e-8, settings: SolverSettings | None = None) -> SolverResult:
    return InteriorPointSolver(settings).solve(prog, tol)
