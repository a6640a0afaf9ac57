from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any

from gridvb.errors import ConfigError
from gridvb.network import Branch, Bus, FeederGraph, validate_radial, with_vbs

log = logging.getLogger(__name__)


def read_json(path: Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Input file not found:\n  {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Malformed JSON in {path}\nline {e.lineno} col {e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object at top level")
    return data


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _num(obj: dict, key: str, where: str, default: float | None = None) -> float:
    if key not in obj:
        if default is None:
            raise ConfigError(f"Missing field {where}.{key}\nSee docs/SCHEMAS.md")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"Field {where}.{key} must be a number, got {val!r}")
    return float(val)


def _list(obj: dict, key: str, where: str) -> list:
    val = obj.get(key)
    if not isinstance(val, list) or not val:
        raise ConfigError(f"Field {where}.{key} must be a non-empty list\nSee docs/SCHEMAS.md")
    return val


def feeder_from_dict(data: dict[str, Any], name: str = "feeder") -> FeederGraph:
    """Build a validated FeederGraph from the feeder JSON document.

    Powers arrive in kW/kVAR and impedances in ohm; both are converted to per-unit with
    the declared bases. Voltage limits arrive as magnitudes and are stored squared.
    """
    s_base_kva = _num(data, "s_base_kva", "feeder")
    v_base_kv = _num(data, "v_base_kv", "feeder")
    v0_pu = _num(data, "v0_pu", "feeder", 1.0)
    if s_base_kva <= 0 or v_base_kv <= 0 or v0_pu <= 0:
        raise ConfigError("Feeder bases and v0_pu must be positive")
    z_base = v_base_kv * v_base_kv * 1000.0 / s_base_kva

    raw_buses = _list(data, "buses", "feeder")
    raw_branches = _list(data, "branches", "feeder")

    # file ids -> contiguous indices, head node first
    file_ids = []
    for k, b in enumerate(raw_buses):
        if not isinstance(b, dict) or "id" not in b:
            raise ConfigError(f"feeder.buses[{k}] must be an object with an id")
        file_ids.append(b["id"])
    if len(set(file_ids)) != len(file_ids):
        raise ConfigError("feeder.buses has duplicate ids")
    head = data.get("head", 0 if 0 in file_ids else file_ids[0])
    if head not in file_ids:
        raise ConfigError(f"Head bus {head!r} is not in feeder.buses")
    order = [head] + [i for i in file_ids if i != head]
    index = {fid: k for k, fid in enumerate(order)}

    by_id = {b["id"]: b for b in raw_buses}
    buses = []
    for fid in order:
        b = by_id[fid]
        where = f"feeder.buses[{fid}]"
        v_min = _num(b, "v_min_pu", where, 0.95)
        v_max = _num(b, "v_max_pu", where, 1.05)
        if not v_min < v_max:
            raise ConfigError(f"{where}: v_min_pu must be below v_max_pu")
        buses.append(
            Bus(
                id=index[fid],
                p_load=_num(b, "p_load_kw", where, 0.0) / s_base_kva,
                q_load=_num(b, "q_load_kvar", where, 0.0) / s_base_kva,
                p_solar=_num(b, "p_solar_kw", where, 0.0) / s_base_kva,
                v_min=v_min * v_min,
                v_max=v_max * v_max,
                name=str(b.get("name", fid)),
            )
        )

    branches = []
    for k, br in enumerate(raw_branches):
        where = f"feeder.branches[{k}]"
        if not isinstance(br, dict) or "from" not in br or "to" not in br:
            raise ConfigError(f"{where} must be an object with from and to")
        for end in ("from", "to"):
            if br[end] not in index:
                raise ConfigError(f"{where}.{end} names unknown bus {br[end]!r}")
        r = _num(br, "r_ohm", where)
        if r < 0:
            raise ConfigError(f"{where}.r_ohm must be nonnegative")
        branches.append(Branch(index[br["from"]], index[br["to"]], r / z_base, _num(br, "x_ohm", where) / z_base))

    graph = FeederGraph(
        buses=tuple(buses),
        branches=tuple(branches),
        v0=v0_pu * v0_pu,
        s_base=s_base_kva * 1000.0,
        v_base=v_base_kv * 1000.0,
        name=str(data.get("name", name)),
    )
    validate_radial(graph)

    # orientation child -> parent regardless of file order
    parent = graph.topology.parent
    oriented = []
    for br in graph.branches:
        child, par = (br.frm, br.to) if parent[br.frm] == br.to else (br.to, br.frm)
        oriented.append(Branch(child, par, br.r, br.x))
    graph = FeederGraph(graph.buses, tuple(oriented), graph.v0, graph.s_base, graph.v_base, graph.name)
    validate_radial(graph)

    placed = data.get("vb_buses")
    if placed is not None:
        if not isinstance(placed, list):
            raise ConfigError("feeder.vb_buses must be a list of bus ids")
        graph = with_vbs(graph, {_bus_index(graph, index, b, "feeder.vb_buses"): j for j, b in enumerate(placed)})

    log.info("loaded feeder %s: %d buses, %d branches", graph.name, graph.n, len(graph.branches))
    return graph


def load_feeder(path: Path) -> FeederGraph:
    path = Path(path)
    return feeder_from_dict(read_json(path), name=path.stem)


def kw(graph: FeederGraph, value_pu: float) -> float:
    return value_pu * graph.s_base / 1000.0


def pu(graph: FeederGraph, value_kw: float) -> float:
    return value_kw * 1000.0 / graph.s_base


def _bus_index(graph: FeederGraph, index: dict, ref: Any, where: str) -> int:
    """Resolve a bus given by file id or by name."""
    if ref in index:
        return index[ref]
    try:
        return graph.by_name(str(ref))
    except KeyError:
        raise ConfigError(f"{where} names unknown bus {ref!r}") from None


def bus_index(graph: FeederGraph, ref: Any, where: str = "bus") -> int:
    """Resolve a bus by name (the file id is kept as the name when none is given)."""
    try:
        return graph.by_name(str(ref))
    except KeyError:
        raise ConfigError(f"{where} names unknown bus {ref!r}") from None
