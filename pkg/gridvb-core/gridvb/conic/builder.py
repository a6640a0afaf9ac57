from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from gridvb.conic.base import ConeDims, ConicProgram
from gridvb.errors import NegativeWeight

log = logging.getLogger(__name__)


@dataclass(slots=True)
class AffineExpr:
    """sum_j coef[j] * x[j] + const over the builder's variables."""

    coef: dict[int, float] = field(default_factory=dict)
    const: float = 0.0

    # numpy scalars defer to the reflected operators
    __array_ufunc__ = None

    @classmethod
    def var(cls, index: int) -> "AffineExpr":
        return cls({index: 1.0}, 0.0)

    def _merge(self, other: "AffineExpr | float", sign: float) -> "AffineExpr":
        if isinstance(other, AffineExpr):
            out = dict(self.coef)
            for j, a in other.coef.items():
                out[j] = out.get(j, 0.0) + sign * a
            return AffineExpr(out, self.const + sign * other.const)
        return AffineExpr(dict(self.coef), self.const + sign * float(other))

    def __add__(self, other: "AffineExpr | float") -> "AffineExpr":
        return self._merge(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other: "AffineExpr | float") -> "AffineExpr":
        return self._merge(other, -1.0)

    def __rsub__(self, other: float) -> "AffineExpr":
        return (-self)._merge(other, 1.0)

    def __mul__(self, k: float) -> "AffineExpr":
        k = float(k)
        return AffineExpr({j: k * a for j, a in self.coef.items()}, k * self.const)

    __rmul__ = __mul__

    def __truediv__(self, k: float) -> "AffineExpr":
        return self * (1.0 / float(k))

    def __neg__(self) -> "AffineExpr":
        return self * -1.0

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(a * x[j] for j, a in self.coef.items())


def lin_sum(exprs: Iterable[AffineExpr | float]) -> AffineExpr:
    out: dict[int, float] = {}
    const = 0.0
    for e in exprs:
        if isinstance(e, AffineExpr):
            for j, a in e.coef.items():
                out[j] = out.get(j, 0.0) + a
            const += e.const
        else:
            const += float(e)
    return AffineExpr(out, const)


class ProgramBuilder:
    """Assembles a ConicProgram from named variable groups and affine constraints.

    Responsibilities:
      - allocate named variables
      - collect equalities, orthant rows and SOC blocks in insertion order
      - emit sparse (G, h, A, b) with orthant rows ahead of the SOC blocks
    """

    def __init__(self) -> None:
        self.n = 0
        self.names: dict[str, slice] = {}
        self._eq: list[tuple[AffineExpr, float]] = []
        self._le: list[AffineExpr] = []
        self._soc: list[list[AffineExpr]] = []
        self._objective = AffineExpr()

    def add_variable(self, name: str, size: int = 1) -> list[AffineExpr]:
        if name in self.names:
            raise ValueError(f"Variable group {name!r} already exists")
        start = self.n
        self.n += size
        self.names[name] = slice(start, self.n)
        return [AffineExpr.var(j) for j in range(start, self.n)]

    def eq(self, expr: AffineExpr, rhs: float = 0.0) -> None:
        self._eq.append((expr, float(rhs)))

    def le(self, expr: AffineExpr | float, rhs: AffineExpr | float = 0.0) -> None:
        """expr <= rhs"""
        self._le.append(lin_sum([rhs, -1.0 * _as_expr(expr)]))

    def ge(self, expr: AffineExpr | float, rhs: AffineExpr | float = 0.0) -> None:
        self.le(rhs, expr)

    def bounds(self, expr: AffineExpr, lo: float, hi: float) -> None:
        self.ge(expr, lo)
        self.le(expr, hi)

    def soc(self, head: AffineExpr | float, tail: Sequence[AffineExpr | float]) -> None:
        """||tail|| <= head"""
        self._soc.append([_as_expr(head)] + [_as_expr(t) for t in tail])

    def minimize(self, expr: AffineExpr) -> None:
        self._objective = expr

    def build(self) -> ConicProgram:
        n = self.n
        c = np.zeros(n)
        for j, a in self._objective.coef.items():
            c[j] += a

        # slack rows: s = h - Gx holds each cone entry's affine value
        rows: list[AffineExpr] = list(self._le)
        qdims: list[int] = []
        for blk in self._soc:
            rows.extend(blk)
            qdims.append(len(blk))
        G, h = _stack(rows, n, negate=True)

        A_rows = [e for e, _ in self._eq]
        A, const = _stack(A_rows, n, negate=False)
        b = np.array([rhs for _, rhs in self._eq], dtype=float) - const

        prog = ConicProgram(
            c=c,
            G=G,
            h=h,
            A=A,
            b=b,
            dims=ConeDims(l=len(self._le), q=tuple(qdims)),
            names=dict(self.names),
            offset=self._objective.const,
        )
        log.debug("built program %s", prog.stats())
        return prog


def _as_expr(e: AffineExpr | float) -> AffineExpr:
    return e if isinstance(e, AffineExpr) else AffineExpr({}, float(e))


def _stack(exprs: Sequence[AffineExpr], n: int, negate: bool) -> tuple[sp.csr_matrix, np.ndarray]:
    """Row-stack expressions. With negate, returns (G, h) such that h - Gx equals each row."""
    r, cidx, v = [], [], []
    const = np.zeros(len(exprs))
    sign = -1.0 if negate else 1.0
    for i, e in enumerate(exprs):
        for j, a in e.coef.items():
            if a != 0.0:
                r.append(i)
                cidx.append(j)
                v.append(sign * a)
        const[i] = e.const
    M = sp.csr_matrix((v, (r, cidx)), shape=(len(exprs), n))
    return M, const


def quadratic_to_soc(
    builder: ProgramBuilder,
    terms: Sequence[tuple[float, AffineExpr | float]],
    name: str,
) -> AffineExpr:
    """Epigraph variable t with t >= sum_j w_j e_j^2.

    Encoded as ||(2 sqrt(w_j) e_j ..., t - 1)|| <= t + 1.
    """
    for k, (w, _) in enumerate(terms):
        if w < 0:
            raise NegativeWeight(k, w)
    (t,) = builder.add_variable(name, 1)
    tail = [2.0 * math.sqrt(w) * _as_expr(e) for w, e in terms if w > 0]
    builder.soc(t + 1.0, tail + [t - 1.0])
    return t
