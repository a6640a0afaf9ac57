from __future__ import annotations

from typing import Any


class GridVBError(RuntimeError):
    """Root of every domain error raised by gridvb.

    The CLI prints the message verbatim and exits 1 (2 for ConfigError).
    """


class ConfigError(GridVBError, ValueError):
    pass


# network


class NetworkError(GridVBError):
    pass


class CycleDetected(NetworkError):
    def __init__(self, cycle: list[tuple[int, int]]) -> None:
        self.cycle = cycle
        edges = ", ".join(f"{a}-{b}" for a, b in cycle)
        super().__init__(f"Feeder is not radial.\nCycle through branches: {edges}")


class DisconnectedBus(NetworkError):
    def __init__(self, buses: list[int]) -> None:
        self.buses = buses
        super().__init__(f"Feeder is not connected.\nBuses unreachable from the head node: {buses}")


class MultipleParents(NetworkError):
    def __init__(self, bus: int, parents: list[int], branches: list[int] | None = None) -> None:
        self.bus = bus
        self.parents = parents
        self.branches = branches or []
        msg = f"Bus {bus} has more than one parent.\nParents: {parents}"
        if self.branches:
            msg += f"\nBranches: {self.branches}"
        super().__init__(msg)


# power flow


class OracleDiverged(GridVBError):
    pass


class NotConverged(OracleDiverged):
    def __init__(self, iterations: int, residual: float) -> None:
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            "Backward/forward sweep did not converge.\n"
            f"Iterations: {iterations}\n"
            f"Last update norm: {residual:.3e}"
        )


class VoltageCollapse(OracleDiverged):
    def __init__(self, bus: int, v: float, iteration: int) -> None:
        self.bus = bus
        self.v = v
        self.iteration = iteration
        super().__init__(
            "Squared voltage became nonpositive during the sweep.\n"
            f"Bus: {bus}  v: {v:.4e}  iteration: {iteration}"
        )


# conic


class NegativeWeight(GridVBError, ValueError):
    def __init__(self, index: int, weight: float) -> None:
        self.index = index
        self.weight = weight
        super().__init__(f"Quadratic term {index} has negative weight {weight!r}.")


class NumericalFailure(GridVBError):
    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None) -> None:
        self.diagnostics = diagnostics or {}
        detail = "\n".join(f"{k}: {v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message}\n{detail}" if detail else message)


# opf


class InfeasibleBounds(GridVBError):
    def __init__(self, what: str) -> None:
        self.what = what
        super().__init__(f"OPF input bounds are inconsistent.\nDetail: {what}")


class SolverFailed(GridVBError):
    def __init__(self, status: str, result: Any = None) -> None:
        self.status = status
        self.result = result
        super().__init__(f"Cone solver did not return an optimal point.\nStatus: {status}")


# control / stability


class UnstableClosedLoop(GridVBError):
    def __init__(self, max_real: float) -> None:
        self.max_real = max_real
        super().__init__(f"Closed-loop matrix is not Hurwitz.\nLargest real part: {max_real:.4e}")


class NoStableGainFound(GridVBError):
    pass


class NoFeasibleGain(GridVBError):
    pass


class NoCrossover(GridVBError):
    pass


class Unstable(GridVBError):
    pass


# sim


class EmptyWindow(GridVBError):
    def __init__(self, start: float, end: float) -> None:
        self.start = start
        self.end = end
        super().__init__(f"Metric window [{start}, {end}] s contains no samples.")
