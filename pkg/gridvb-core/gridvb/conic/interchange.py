"""JSON interchange for cone programs.

Layout (all matrices in coordinate form):

    {"format": "gridvb-conic/1",
     "c": [...], "h": [...], "b": [...], "offset": 0.0,
     "G": {"shape": [m, n], "row": [...], "col": [...], "val": [...]},
     "A": {...same...},
     "dims": {"l": int, "q": [int, ...]},
     "names": {"group": [start, stop], ...}}

The slack convention is h - Gx in K, Ax = b, minimize c'x.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from gridvb.conic.base import ConeDims, ConicProgram
from gridvb.errors import ConfigError

FORMAT = "gridvb-conic/1"


def _coo(M: Any) -> dict[str, Any]:
    C = sp.coo_matrix(M)
    return {
        "shape": [int(C.shape[0]), int(C.shape[1])],
        "row": C.row.tolist(),
        "col": C.col.tolist(),
        "val": C.data.tolist(),
    }


def _from_coo(d: dict[str, Any]) -> sp.csr_matrix:
    return sp.csr_matrix((d["val"], (d["row"], d["col"])), shape=tuple(d["shape"]))


def program_to_dict(prog: ConicProgram) -> dict[str, Any]:
    return {
        "format": FORMAT,
        "c": prog.c.tolist(),
        "h": np.asarray(prog.h).tolist(),
        "b": np.asarray(prog.b).tolist(),
        "offset": prog.offset,
        "G": _coo(prog.G),
        "A": _coo(prog.A),
        "dims": {"l": prog.dims.l, "q": list(prog.dims.q)},
        "names": {k: [s.start, s.stop] for k, s in prog.names.items()},
    }


def program_from_dict(data: dict[str, Any]) -> ConicProgram:
    if data.get("format") != FORMAT:
        raise ConfigError(f"Not a {FORMAT} document (format={data.get('format')!r})")
    dims = data.get("dims", {}) or {}
    return ConicProgram(
        c=np.asarray(data["c"], dtype=float),
        G=_from_coo(data["G"]),
        h=np.asarray(data["h"], dtype=float),
        A=_from_coo(data["A"]),
        b=np.asarray(data["b"], dtype=float),
        dims=ConeDims(l=int(dims.get("l", 0)), q=tuple(int(q) for q in dims.get("q", []))),
        names={k: slice(int(a), int(b)) for k, (a, b) in (data.get("names", {}) or {}).items()},
        offset=float(data.get("offset", 0.0)),
    )


def dump_program(prog: ConicProgram, path: Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(program_to_dict(prog)), encoding="utf-8")
    return path


def load_program(path: Path) -> ConicProgram:
    return program_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
