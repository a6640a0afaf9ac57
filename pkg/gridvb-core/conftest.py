from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from gridvb.control.model import LinearFeederModel
from gridvb.io import load_feeder
from gridvb.network import Branch, Bus, FeederGraph, with_vbs
from gridvb.opf import OPFInput, operating_point_input
from gridvb.powerflow import head_node_power, solve_ac
from gridvb.settings import OPFSettings
from gridvb.vb import VBParams

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"


def line_feeder(n: int = 4, p_load: float = 0.05, q_load: float = 0.02, r: float = 0.01, x: float = 0.02) -> FeederGraph:
    """Head node plus n - 1 buses in a chain, every downstream bus loaded the same."""
    buses = [Bus(0, name="0")] + [Bus(i, p_load, q_load, name=str(i)) for i in range(1, n)]
    branches = [Branch(i, i - 1, r, x) for i in range(1, n)]
    return FeederGraph(tuple(buses), tuple(branches), name=f"line{n}")


def random_feeder(n: int, seed: int = 0) -> FeederGraph:
    """Random radial feeder: bus i hangs off a uniformly chosen earlier bus."""
    rng = np.random.default_rng(seed)
    buses = [Bus(0, name="0")]
    branches = []
    for i in range(1, n):
        buses.append(Bus(i, rng.uniform(0.0, 0.04), rng.uniform(0.0, 0.02), name=str(i)))
        branches.append(Branch(i, int(rng.integers(0, i)), rng.uniform(0.002, 0.01), rng.uniform(0.002, 0.01)))
    return FeederGraph(tuple(buses), tuple(branches), name=f"random{n}_{seed}")


def nominal_import(graph: FeederGraph) -> float:
    s = graph.nominal_injections()
    s[0] = 0.0
    return head_node_power(solve_ac(graph, s))


def line_opf_input(
    offset: float = -0.01,
    horizon: int = 3,
    p_max: float = 0.03,
    energy: float = 0.05,
    b0_frac: float = 0.5,
    **kw,
) -> OPFInput:
    """One VB on the last bus of a four-bus line; the reference sits `offset` away from the nominal import."""
    graph = with_vbs(line_feeder(4), {3: 0})
    params = VBParams.symmetric(p_max, energy)
    settings = replace(OPFSettings(horizon=horizon, alpha=0.01), **kw)
    ref = [nominal_import(graph) + offset] * horizon
    return operating_point_input(graph, [params], [b0_frac * energy], [0.0], ref, [0.0] * horizon, settings)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def ieee37() -> FeederGraph:
    return load_feeder(FIXTURES / "ieee37.json")


@pytest.fixture
def line4() -> FeederGraph:
    return line_feeder(4)


@pytest.fixture(params=[(8, 1), (15, 2), (25, 3)], ids=lambda p: f"n{p[0]}")
def small_random(request) -> FeederGraph:
    n, seed = request.param
    return random_feeder(n, seed)


@pytest.fixture
def two_vb_model() -> LinearFeederModel:
    return LinearFeederModel.from_sensitivities([-1.0, -1.0], [1.0, 1.0], noise_pole=1.0, p_max=[0.03, 0.03])


def line_doc(n: int = 4, load_kw: float = 50.0) -> dict:
    """Feeder document for a chain of n buses, loads in kW; z_base is 23.04 ohm."""
    return {
        "name": f"line{n}",
        "s_base_kva": 1000.0,
        "v_base_kv": 4.8,
        "buses": [{"id": 0, "name": "0"}]
        + [{"id": i, "name": str(i), "p_load_kw": load_kw, "q_load_kvar": 0.4 * load_kw} for i in range(1, n)],
        "branches": [{"from": i, "to": i - 1, "r_ohm": 0.2304, "x_ohm": 0.4608} for i in range(1, n)],
    }


def two_feeder_doc(**extra) -> dict:
    """Two copies of a four-bus line: one 10 kW VB plus one 30 kW VB on feeder 0, two 30 kW VBs on feeder 1."""
    doc = {
        "name": "pair",
        "feeder": line_doc(),
        "dt_sim_s": 0.5,
        "t_end_s": 40.0,
        "dead_zone_kw": 5.0,
        "cadences": {"opf_s": 120, "pi_s": 5, "retune_s": 120, "adjust_s": 10},
        "settings": {"control": {"kp_points": 8}, "opf": {"horizon": 2}},
        "feeders": [
            {"name": "a", "vb_buses": ["3", "2"], "p_max_kw": [10.0, 30.0], "energy_kwh": 50, "tau_s": [1.0, 1.5],
             "p_noise_buses": ["2", "3"], "q_noise_buses": ["2"]},
            {"name": "b", "vb_buses": ["3", "1"], "p_max_kw": 30.0, "energy_kwh": 50, "tau_s": 1.0,
             "p_noise_buses": ["1", "2"]},
        ],
    }
    doc.update(extra)
    return doc
