from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from gridvb.conic.base import ConeDims


@dataclass(frozen=True, slots=True)
class SOCGroup:
    dim: int
    idx: np.ndarray  # (k, dim) positions in the slack vector


class ConeLayout:
    """Vectorized Jordan algebra over an orthant block followed by SOC blocks.

    SOC blocks of equal dimension are processed together as (k, dim) arrays.
    """

    def __init__(self, dims: ConeDims) -> None:
        self.dims = dims
        self.l = dims.l
        self.m = dims.size
        by_dim: dict[int, list[int]] = {}
        offset = dims.l
        for d in dims.q:
            if d < 1:
                raise ValueError(f"SOC block dimension must be positive, got {d}")
            by_dim.setdefault(d, []).append(offset)
            offset += d
        self.groups = [
            SOCGroup(d, np.asarray(starts)[:, None] + np.arange(d)[None, :])
            for d, starts in sorted(by_dim.items())
        ]

    @property
    def degree(self) -> int:
        return self.dims.degree

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[: self.l] = 1.0
        for g in self.groups:
            e[g.idx[:, 0]] = 1.0
        return e

    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.m)
        out[: self.l] = u[: self.l] * v[: self.l]
        for g in self.groups:
            U, V = u[g.idx], v[g.idx]
            blk = np.empty_like(U)
            blk[:, 0] = np.sum(U * V, axis=1)
            blk[:, 1:] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
            out[g.idx] = blk
        return out

    def divide(self, lam: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Solve lam o u = v for u."""
        out = np.empty(self.m)
        out[: self.l] = v[: self.l] / lam[: self.l]
        for g in self.groups:
            L, V = lam[g.idx], v[g.idx]
            l0, l1 = L[:, 0], L[:, 1:]
            det = l0 * l0 - np.sum(l1 * l1, axis=1)
            u0 = (l0 * V[:, 0] - np.sum(l1 * V[:, 1:], axis=1)) / det
            blk = np.empty_like(L)
            blk[:, 0] = u0
            blk[:, 1:] = (V[:, 1:] - u0[:, None] * l1) / l0[:, None]
            out[g.idx] = blk
        return out

    def boundary_shift(self, x: np.ndarray) -> float:
        """Smallest t such that x + t e lies in the cone."""
        t = -np.inf
        if self.l:
            t = max(t, float(-np.min(x[: self.l])))
        for g in self.groups:
            X = x[g.idx]
            t = max(t, float(np.max(np.linalg.norm(X[:, 1:], axis=1) - X[:, 0])))
        return t

    def max_step(self, x: np.ndarray, d: np.ndarray) -> float:
        """Largest alpha with x + alpha d in the cone (x interior)."""
        alpha = np.inf
        if self.l:
            dl = d[: self.l]
            neg = dl < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-x[: self.l][neg] / dl[neg])))
        for g in self.groups:
            X, D = x[g.idx], d[g.idx]
            a = D[:, 0] ** 2 - np.sum(D[:, 1:] ** 2, axis=1)
            b = 2.0 * (X[:, 0] * D[:, 0] - np.sum(X[:, 1:] * D[:, 1:], axis=1))
            c = X[:, 0] ** 2 - np.sum(X[:, 1:] ** 2, axis=1)
            alpha = min(alpha, float(np.min(_first_positive_root(a, b, c))))
        return alpha


def _first_positive_root(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    out = np.full(a.shape, np.inf)
    scale = np.maximum(np.abs(b), 1.0) * 1e-14
    lin = np.abs(a) <= scale
    with np.errstate(divide="ignore", invalid="ignore"):
        m = lin & (b < 0)
        out[m] = -c[m] / b[m]

        quad = ~lin
        disc = b * b - 4.0 * a * c
        real = quad & (disc >= 0)
        sq = np.sqrt(np.where(real, disc, 0.0))
        qq = -0.5 * (b + np.copysign(sq, b))
        r1 = np.where(real, qq / a, np.inf)
        r2 = np.where(real & (qq != 0), c / qq, np.inf)
        r1 = np.where(r1 > 0, r1, np.inf)
        r2 = np.where(r2 > 0, r2, np.inf)
        out[quad] = np.minimum(r1, r2)[quad]
    out[c <= 0] = 0.0
    return out


class NTScaling:
    """Nesterov-Todd scaling W with W z = W^-1 s = lambda."""

    def __init__(self, layout: ConeLayout, s: np.ndarray, z: np.ndarray) -> None:
        self.layout = layout
        l = layout.l
        self.d = np.sqrt(s[:l] / z[:l])
        self.blocks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        for g in layout.groups:
            S, Z = s[g.idx], z[g.idx]
            sj = np.sqrt(np.maximum(S[:, 0] ** 2 - np.sum(S[:, 1:] ** 2, axis=1), 1e-300))
            zj = np.sqrt(np.maximum(Z[:, 0] ** 2 - np.sum(Z[:, 1:] ** 2, axis=1), 1e-300))
            sb = S / sj[:, None]
            zb = Z / zj[:, None]
            gamma = np.sqrt(0.5 * (1.0 + np.sum(sb * zb, axis=1)))
            jz = zb.copy()
            jz[:, 1:] *= -1.0
            wb = (sb + jz) / (2.0 * gamma[:, None])
            eta = np.sqrt(sj / zj)
            self.blocks.append((eta, wb[:, 0], wb[:, 1:]))
        self.lam = self.apply(z)

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        l = self.layout.l
        out[:l] = self.d * v[:l]
        for g, (eta, a, q) in zip(self.layout.groups, self.blocks):
            V = v[g.idx]
            v0, v1 = V[:, 0], V[:, 1:]
            qv = np.sum(q * v1, axis=1)
            blk = np.empty_like(V)
            blk[:, 0] = eta * (a * v0 + qv)
            blk[:, 1:] = eta[:, None] * (v0[:, None] * q + v1 + q * (qv / (1.0 + a))[:, None])
            out[g.idx] = blk
        return out

    def apply_inv(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        l = self.layout.l
        out[:l] = v[:l] / self.d
        for g, (eta, a, q) in zip(self.layout.groups, self.blocks):
            V = v[g.idx]
            v0, v1 = V[:, 0], V[:, 1:]
            qv = np.sum(q * v1, axis=1)
            blk = np.empty_like(V)
            blk[:, 0] = (a * v0 - qv) / eta
            blk[:, 1:] = (-v0[:, None] * q + v1 + q * (qv / (1.0 + a))[:, None]) / eta[:, None]
            out[g.idx] = blk
        return out

    def inv_matrix(self) -> sp.csr_matrix:
        """W^-1 as a block-diagonal sparse matrix."""
        m, l = self.layout.m, self.layout.l
        rows = [np.arange(l)]
        cols = [np.arange(l)]
        vals = [1.0 / self.d]
        for g, (eta, a, q) in zip(self.layout.groups, self.blocks):
            k, dim = g.idx.shape
            M = np.zeros((k, dim, dim))
            M[:, 0, 0] = a
            M[:, 0, 1:] = -q
            M[:, 1:, 0] = -q
            M[:, 1:, 1:] = np.eye(dim - 1)[None] + q[:, :, None] * q[:, None, :] / (1.0 + a)[:, None, None]
            M /= eta[:, None, None]
            rows.append(np.repeat(g.idx, dim, axis=1).ravel())
            cols.append(np.tile(g.idx, (1, dim)).ravel())
            vals.append(M.ravel())
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
        )
