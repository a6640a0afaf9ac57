from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gridvb.network import FeederGraph
from gridvb.powerflow import head_node_power, solve_ac
from gridvb.vb import VBParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearFeederModel:
    """x' = A x + B_w w + B_u u,  e = C x.

    For a feeder the state is (p_b[0..m-1], d): one first-order lag per VB plus a
    filtered disturbance d entering the head-node error e = sum_r a_r p_b[r] + d.
    Each VB applies u_r = -k_r e.
    """

    A: np.ndarray
    B_w: np.ndarray
    B_u: np.ndarray
    C: np.ndarray
    sensitivity: np.ndarray | None = None
    tau: np.ndarray | None = None
    t_delay: np.ndarray | None = None
    p_max: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B_w.shape[0] != n or self.B_u.shape[0] != n or self.C.shape != (1, n):
            raise ValueError(
                "Inconsistent model dimensions.\n"
                f"A {self.A.shape}  B_w {self.B_w.shape}  B_u {self.B_u.shape}  C {self.C.shape}"
            )

    @property
    def n_inputs(self) -> int:
        return int(self.B_u.shape[1])

    @classmethod
    def scalar(cls, a: float = -1.0) -> "LinearFeederModel":
        """x' = a x + w + u, e = x."""
        one = np.ones((1, 1))
        return cls(A=a * one, B_w=one.copy(), B_u=one.copy(), C=one.copy())

    @classmethod
    def from_sensitivities(
        cls,
        sensitivity: Sequence[float],
        tau: Sequence[float],
        noise_pole: float = 1.0,
        t_delay: Sequence[float] | None = None,
        p_max: Sequence[float] | None = None,
    ) -> "LinearFeederModel":
        a = np.asarray(sensitivity, dtype=float)
        tau = np.asarray(tau, dtype=float)
        m = a.size
        if tau.shape != (m,):
            raise ValueError("sensitivity and tau lengths differ")

        A = np.zeros((m + 1, m + 1))
        A[np.arange(m), np.arange(m)] = -1.0 / tau
        A[m, m] = -noise_pole
        B_u = np.zeros((m + 1, m))
        B_u[np.arange(m), np.arange(m)] = 1.0 / tau
        B_w = np.zeros((m + 1, 1))
        B_w[m, 0] = 1.0
        C = np.append(a, 1.0)[None, :]
        return cls(
            A=A,
            B_w=B_w,
            B_u=B_u,
            C=C,
            sensitivity=a,
            tau=tau,
            t_delay=None if t_delay is None else np.asarray(t_delay, dtype=float),
            p_max=None if p_max is None else np.asarray(p_max, dtype=float),
        )

    def closed_loop(self, k: Sequence[float]) -> np.ndarray:
        k = np.asarray(k, dtype=float).reshape(-1, 1)
        return self.A - self.B_u @ k @ self.C

    def loop_gain(self, k: Sequence[float], w: np.ndarray) -> np.ndarray:
        """L(jw) = C (jwI - A)^-1 B_u k, the loop broken at the measured error."""
        k = np.asarray(k, dtype=float)
        bk = self.B_u @ k
        eye = np.eye(self.A.shape[0])
        out = np.empty(np.size(w), dtype=complex)
        for i, wi in enumerate(np.atleast_1d(w)):
            out[i] = (self.C @ np.linalg.solve(1j * wi * eye - self.A, bk))[0]
        return out


def vb_sensitivities(graph: FeederGraph, injections: Sequence[complex], h: float = 1e-4) -> np.ndarray:
    """Central-difference dp0/dp_b at every VB bus of the graph, in VB-index order."""
    s = np.asarray(injections, dtype=complex)
    out = []
    for bus in graph.vb_buses():
        up = s.copy()
        dn = s.copy()
        up[bus] += h
        dn[bus] -= h
        out.append((head_node_power(solve_ac(graph, up)) - head_node_power(solve_ac(graph, dn))) / (2.0 * h))
    return np.array(out)


def linearize_feeder(
    graph: FeederGraph,
    injections: Sequence[complex],
    vbs: Sequence[VBParams],
    noise_pole: float = 1.0,
    h: float = 1e-4,
) -> LinearFeederModel:
    """Linear model about an AC operating point. Delays and saturation are left out."""
    a = vb_sensitivities(graph, injections, h)
    if a.size != len(vbs):
        raise ValueError(f"{graph.name}: {a.size} VB buses but {len(vbs)} VB parameter sets")
    log.debug("%s sensitivities %s", graph.name, np.round(a, 5))
    return LinearFeederModel.from_sensitivities(
        a,
        [p.tau for p in vbs],
        noise_pole=noise_pole,
        t_delay=[p.t_delay for p in vbs],
        p_max=[p.p_max for p in vbs],
    )
