"""JSON reports and per-edge CSV dumps of discrete spinors."""
from __future__ import annotations

import csv
import json
import math
import os
from typing import Optional

import numpy as np

from . import dirac_core as dc
from . import graph_model as gm

REPORT_FIELDS = ("branch", "omega", "mass", "energy_level", "residual_norm", "shift",
                 "omega_track", "stages", "diagnostics")
VOLATILE = frozenset({"runtime_s"})  # wall-clock, kept off files so reruns are byte-identical


def _num(x):
    """JSON-safe scalar; floats keep 17 significant digits via repr."""
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return repr(x)
        return x
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"re": to_jsonable(obj.real.tolist()), "im": to_jsonable(obj.imag.tolist())}
        return to_jsonable(obj.tolist())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if hasattr(obj, "__dataclass_fields__"):
        return {k: to_jsonable(getattr(obj, k)) for k in obj.__dataclass_fields__}
    return _num(obj)


def report_to_dict(rep) -> dict:
    """Canonical report dictionary (fixed field order, field itself excluded)."""
    out = {}
    for k in REPORT_FIELDS:
        v = getattr(rep, k)
        if k == "diagnostics":
            v = {kk: vv for kk, vv in v.items()
                 if kk not in VOLATILE and (kk != "residual_history" or len(vv) < 200)}
        out[k] = to_jsonable(v)
    return out


def dumps(doc) -> str:
    return json.dumps(to_jsonable(doc), indent=2, allow_nan=False)


def write_json(path: str, doc) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(doc))
        fh.write("\n")


def read_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def load_graph(path: str) -> gm.MetricGraph:
    return gm.parse_graph(read_json(path))


# -- spinor CSV --------------------------------------------------------------

CSV_HEADER = ("x", "re_u1", "im_u1", "re_u2", "im_u2")


def write_spinor_csv(directory: str, op, u, prefix: str = "u") -> list:
    """One CSV per edge, rows sorted by x. Node rows carry u¹, midpoint rows
    carry u²; the other pair of columns is left empty."""
    os.makedirs(directory, exist_ok=True)
    u = np.asarray(u, dtype=complex)
    paths = []
    for e in op.disc.edges:
        rows = [(float(x), 0, k) for x, k in zip(e.x_nodes, e.nodes)]
        rows += [(float(x), 1, k) for x, k in zip(e.x_cells, e.cells)]
        rows.sort()
        path = os.path.join(directory, f"{prefix}_{e.id}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for x, kind, k in rows:
                val = (repr(float(u[k].real)), repr(float(u[k].imag)))
                w.writerow((repr(x),) + (val + ("", "") if kind == 0 else ("", "") + val))
        paths.append(path)
    return paths


def read_spinor_csv(directory: str, op, prefix: str = "u") -> np.ndarray:
    """Inverse of :func:`write_spinor_csv`; shared vertex nodes must agree."""
    u = np.full(op.N, np.nan, dtype=complex)
    for e in op.disc.edges:
        path = os.path.join(directory, f"{prefix}_{e.id}.csv")
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        nodes = [r for r in rows if r["re_u1"] != ""]
        cells = [r for r in rows if r["re_u2"] != ""]
        if len(nodes) != len(e.nodes) or len(cells) != len(e.cells):
            raise ValueError(f"edge {e.id}: row count does not match the grid")
        for idx, r in zip(e.nodes, nodes):
            val = complex(float(r["re_u1"]), float(r["im_u1"]))
            if not np.isnan(u[idx]) and u[idx] != val:
                raise ValueError(f"inconsistent vertex value at DOF {idx}")
            u[idx] = val
        for idx, r in zip(e.cells, cells):
            u[idx] = complex(float(r["re_u2"]), float(r["im_u2"]))
    if np.isnan(u).any():
        raise ValueError("missing DOFs in spinor dump")
    return u


def grid_to_dict(grid: dc.Grid) -> dict:
    return {"h": grid.h, "L": grid.L, "overrides": [list(kv) for kv in grid.overrides]}
