"""Command-line entry point.

Graph documents are JSON::

    {"vertices": ["v", ...],
     "edges": [{"id": "e1", "from": "v", "to": "w", "length": 1.0},
               {"id": "H", "from": "v", "halfline": true}]}

Half-line edges omit ``to`` and ``length``. Reports are JSON with a fixed
field order and floats written with 17 significant digits; solved fields
go to one CSV per edge with columns ``x, re_u1, im_u1, re_u2, im_u2`` (u¹ on
node rows, u² on cell-midpoint rows).

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 invariant violation.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from typing import Optional

import numpy as np

from . import dirac_core as dc
from . import functionals as fn
from . import graph_model as gm
from . import io as qio
from . import solver as sv
from .errors import ConfigError, InvariantViolation, NumericsError, QGDiracError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICS, EXIT_INVARIANT = 0, 2, 3, 4


# -- canonical JSON ----------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return json.dumps(repr(x))
    s = format(x, ".17g")
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def canonical_dumps(obj, indent: int = 0) -> str:
    """JSON text with insertion-ordered keys and 17-significant-digit floats."""
    pad, pad1 = "  " * indent, "  " * (indent + 1)
    obj = qio.to_jsonable(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad1}{json.dumps(k)}: {canonical_dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(canonical_dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad1 + canonical_dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    return json.dumps(obj)


def write_canonical(path: str, obj) -> str:
    text = canonical_dumps(obj) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text


# -- configuration -----------------------------------------------------------

def _common(p: argparse.ArgumentParser, nonlinear: bool = True):
    p.add_argument("--graph", required=True, help="graph document (JSON)")
    p.add_argument("--m", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--h", type=float, default=0.05, help="grid spacing")
    p.add_argument("--L", type=float, default=None, help="half-line truncation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory")
    if nonlinear:
        p.add_argument("--a", type=float, default=0.1)
        p.add_argument("--p", type=float, default=3.0)
        p.add_argument("--sign", type=int, choices=(1, -1), default=1)
        p.add_argument("--region", choices=("core", "core+segment"), default="core")
        p.add_argument("--ell", type=float, default=None)
        p.add_argument("--halfline", default=None, help="half-line carrying the segment")
        p.add_argument("--r0", type=float, default=2.0)
        p.add_argument("--mu0", type=float, default=0.1)
        p.add_argument("--stages", type=int, default=12)


def _load_graph(path: str) -> gm.MetricGraph:
    if not os.path.exists(path):
        raise ConfigError(f"graph: file not found: {path}")
    try:
        doc = qio.read_json(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"graph: not valid JSON ({exc})") from exc
    return gm.parse_graph(doc)


def _region(args, g):
    if args.region == "core":
        return gm.CoreOnly()
    if args.ell is None:
        raise ConfigError("--ell is required with --region core+segment")
    hl = args.halfline or (g.half_lines[0].id if g.half_lines else None)
    if hl is None:
        raise ConfigError("--region core+segment needs a half-line")
    g.halfline(hl)
    return gm.CoreUnionSegment(hl, args.ell)


def build_config(args) -> dict:
    g = _load_graph(args.graph)
    cfg = {"graph": gm.graph_to_doc(g), "m": args.m, "c": args.c, "h": args.h, "L": args.L,
           "seed": args.seed}
    if hasattr(args, "a"):
        reg = _region(args, g)
        cfg.update(a=args.a, p=args.p, sign=args.sign, region=args.region,
                   ell=getattr(reg, "ell", None), halfline=getattr(reg, "halfline", None),
                   r0=args.r0, mu0=args.mu0, stages=args.stages)
    return cfg


def objects(cfg: dict):
    """Graph, operator and nonlinearity rebuilt from a configuration."""
    g = gm.parse_graph(cfg["graph"])
    params = dc.DiracParams(cfg["m"], cfg["c"])
    op = dc.assemble_dirac(g, params, dc.Grid(h=cfg["h"], L=cfg["L"]))
    spec = None
    if "a" in cfg:
        reg = gm.CoreOnly() if cfg["region"] == "core" else gm.CoreUnionSegment(cfg["halfline"],
                                                                             cfg["ell"])
        spec = fn.NonlinearitySpec(cfg["a"], cfg["p"], cfg["sign"], reg)
    return g, op, spec


def _schedule(cfg):
    return sv.ContinuationSchedule.default(stages=cfg["stages"], r0=cfg["r0"], mu0=cfg["mu0"])


def _outdir(args) -> Optional[str]:
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    return args.out


# -- commands ----------------------------------------------------------------

def cmd_spectrum(args) -> int:
    cfg = build_config(args)
    g, op, _ = objects(cfg)
    mc2 = op.mc2
    window = (-args.window * mc2 * (1 + 1e-9), args.window * mc2 * (1 + 1e-9))
    lam, vecs = dc.eigen(op, count=args.count, window=window)
    oracle = None
    if g.is_compact and args.oracle:
        oracle = dc.secular_eigenvalues(g, op.params, (window[0] - 0.01 * mc2, window[1] + 0.01 * mc2))
    rows = []
    print(f"{'index':>5}  {'lambda':>22}  {'|lambda|-mc2':>22}  classification")
    for i, lv in enumerate(lam):
        cls = dc.classify_eigenvalue(op, float(lv), vecs[:, i])
        if abs(lv) < 1e-12:
            cls = "zero mode (flagged)"
        row = {"index": i, "lambda": float(lv), "gap_distance": float(abs(lv) - mc2),
               "classification": cls}
        rows.append(row)
        print(f"{i:5d}  {lv:22.15g}  {abs(lv) - mc2:22.15g}  {cls}")
    doc = {"config": cfg, "eigenvalues": rows}
    if oracle is not None:
        orc = np.array([x for x in oracle if window[0] <= x <= window[1]])
        doc["oracle"] = [float(x) for x in orc]
        inwin = lam[(lam >= window[0]) & (lam <= window[1])]
        if len(orc) == len(inwin):
            doc["oracle_max_deviation"] = float(np.max(np.abs(np.sort(orc) - inwin))) if len(orc) else 0.0
            print(f"secular oracle: max deviation {doc['oracle_max_deviation']:.3e}")
        else:
            doc["oracle_count_mismatch"] = [len(orc), int(len(inwin))]
            print(f"secular oracle: {len(orc)} roots vs {len(inwin)} discrete eigenvalues")
    out = _outdir(args)
    if out:
        write_canonical(os.path.join(out, "spectrum.json"), doc)
        for i in range(min(args.dump, len(lam))):
            qio.write_spinor_csv(os.path.join(out, f"eig{i}"), op, vecs[:, i])
    return EXIT_OK


def _report_doc(cfg, rep: sv.SolveReport, extra=None) -> dict:
    doc = {"config": cfg, "report": qio.report_to_dict(rep)}
    if extra:
        doc.update(extra)
    return doc


def cmd_solve(args) -> int:
    cfg = build_config(args)
    cfg.update(method=args.method, shift=args.shift, omega=args.omega)
    g, op, spec = objects(cfg)
    if args.method == "continuation":
        rep = sv.continuation_solve(op, spec, _schedule(cfg), shift=args.shift)
    else:
        seed = dc.build_phi_b(op, 0.05, "A") if spec.sign == 1 else dc.cycle_eigenfunction(op)
        if args.method == "mass":
            rep = sv.direct_solve(op, spec, "mass", seed / math.sqrt(op.disc.mass(seed)),
                                  omega0=args.omega if args.omega is not None else 0.9 * op.mc2)
        else:
            if args.omega is None:
                raise ConfigError("--omega is required with --method omega")
            rep = sv.direct_solve(op, spec, "omega", seed, omega0=args.omega, shift=args.omega)
    print(f"branch={rep.branch} omega={rep.omega!r} mass={rep.mass!r} "
          f"energy_level={rep.energy_level!r} residual={rep.residual_norm:.3e}")
    out = _outdir(args)
    if out:
        write_canonical(os.path.join(out, "report.json"), _report_doc(cfg, rep))
        qio.write_spinor_csv(os.path.join(out, "field"), op, rep.u)
    rep.check_invariants(op.mc2)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    g, op, spec = objects(cfg)
    values = [float(v) for v in args.values.split(",")]
    cells = sv.sweep(g, op.params, op.grid, spec, args.axis, values, _schedule(cfg),
                     shift=args.shift, method=args.method, omega=args.omega or 0.0)
    rows = []
    print(f"{args.axis:>10}  {'branch':>13}  {'omega':>20}  {'mass':>20}  {'energy':>20}")
    for cl in cells:
        r = cl.report
        row = {"axis": cl.axis, "value": cl.value,
               "branch": r.branch if r else sv.FAILED,
               "omega": r.omega if r else None, "mass": r.mass if r else None,
               "energy_level": r.energy_level if r else None,
               "residual_norm": r.residual_norm if r else None, "error": cl.error}
        rows.append(row)
        if r:
            print(f"{cl.value:10.5g}  {r.branch:>13}  {r.omega:20.12g}  {r.mass:20.12g}  "
                  f"{r.energy_level:20.12g}")
        else:
            print(f"{cl.value:10.5g}  {sv.FAILED:>13}  {cl.error}")
    out = _outdir(args)
    if out:
        write_canonical(os.path.join(out, "sweep.json"), {"config": cfg, "cells": rows})
        with open(os.path.join(out, "sweep.csv"), "w") as fh:
            cols = list(rows[0].keys()) if rows else []
            fh.write(",".join(cols) + "\n")
            for row in rows:
                fh.write(",".join("" if row[k] is None else
                                  (_fmt_float(row[k]) if isinstance(row[k], float) else str(row[k]))
                                  for k in cols) + "\n")
    return EXIT_OK


def cmd_gns(args) -> int:
    cfg = build_config(args)
    g, op, spec = objects(cfg)
    est = fn.estimate_gns(op, spec.region, args.exponent or spec.p, args.norm, trials=args.trials,
                          seed=args.seed)
    print(f"{args.norm} constant estimate (lower bound) = {est.value!r}, spread = {est.spread:.3e}")
    out = _outdir(args)
    if out:
        write_canonical(os.path.join(out, "gns.json"),
                        {"config": cfg, "value": est.value, "norm_kind": est.norm_kind,
                         "p": est.p, "trials": est.trials, "values": est.values})
    return EXIT_OK


def cmd_thresholds(args) -> int:
    params = dc.DiracParams(args.m, args.c)
    CK, CG = args.CK, args.CG
    if CK is None and CG is None:
        if not args.graph:
            raise ConfigError("supply --CK/--CG or a --graph to estimate them")
        g = _load_graph(args.graph)
        op = dc.assemble_dirac(g, params, dc.Grid(h=args.h, L=args.L))
        CK = fn.estimate_gns(op, gm.CoreOnly(), args.p, "Y", seed=args.seed).value
    th = fn.thresholds(params, args.p, CK, CG, args.S2p2, args.Sinf)
    for k in ("a0", "a_star0", "a_tilde0"):
        v = getattr(th, k)
        print(f"{k} = {'n/a' if v is None else repr(v)}")
    return EXIT_OK


def check_graph(g: gm.MetricGraph) -> dict:
    ok, free = gm.core_is_tree_with_at_most_one_free_leaf(g) if g.bounded_edges else (False, [])
    cyc = gm.find_simple_cycle(g)
    anchors = {h.anchor for h in g.half_lines}
    return {"compact": g.is_compact, "tree_one_free_leaf": bool(ok), "free_leaves": list(free),
            "simple_cycle": None if cyc is None else [[e, bool(f)] for e, f in cyc],
            "two_halfline_vertices": len(anchors) >= 2}


def cmd_check_graph(args) -> int:
    g = _load_graph(args.graph)
    res = check_graph(g)
    for k, v in res.items():
        if k == "simple_cycle":
            v = "none" if v is None else " ".join(("+" if f else "-") + e for e, f in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        print(f"{k}={v}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_canonical(os.path.join(args.out, "check_graph.json"), res)
    return EXIT_OK


def cmd_verify(args) -> int:
    """Replay a stored report: rebuild the operator from its config, reload
    the field, recompute every derived number and re-emit the report; the
    bytes must match and the branch invariants must hold."""
    path = args.report
    if not os.path.exists(path):
        raise ConfigError(f"report: file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    doc = json.loads(text)
    cfg = doc["config"]
    g, op, spec = objects(cfg)
    fdir = args.fields or os.path.join(os.path.dirname(path), "field")
    u = qio.read_spinor_csv(fdir, op)
    r = doc["report"]
    shift = float(r["shift"])
    omega = float(r["omega"])
    rep = sv.SolveReport(u=u, omega=omega, mass=op.disc.mass(u),
                         energy_level=fn.energy_level(op, u, spec, shift),
                         residual_norm=fn.residual_norm(op, u, omega, spec), branch=r["branch"],
                         shift=shift, omega_track=r["omega_track"], stages=r["stages"],
                         diagnostics=r["diagnostics"])
    again = canonical_dumps(_report_doc(cfg, rep)) + "\n"
    if again != text:
        raise InvariantViolation("replayed report differs from the stored one")
    rep.check_invariants(op.mc2)
    print(f"verified {path}: branch={rep.branch} sha256={hashlib.sha256(text.encode()).hexdigest()[:16]}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qgdirac", description="Dirac operators and normalized "
                                 "solutions on metric graphs")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("spectrum", help="eigenvalues with gap classification")
    _common(p, nonlinear=False)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--window", type=float, default=3.0, help="|lambda| <= window * mc2")
    p.add_argument("--dump", type=int, default=0, help="eigenfunctions to write as CSV")
    p.add_argument("--no-oracle", dest="oracle", action="store_false")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("solve", help="normalized solution")
    _common(p)
    p.add_argument("--method", choices=("continuation", "mass", "omega"), default="continuation")
    p.add_argument("--shift", type=float, default=0.0)
    p.add_argument("--omega", type=float, default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="one solve per parameter value")
    _common(p)
    p.add_argument("--axis", choices=("a", "p", "ell", "m", "c", "s"), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--method", choices=("continuation", "omega"), default="continuation")
    p.add_argument("--shift", type=float, default=0.0)
    p.add_argument("--omega", type=float, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gns", help="estimate a Gagliardo-Nirenberg constant")
    _common(p)
    p.add_argument("--norm", choices=("Y", "H1", "inf"), default="Y")
    p.add_argument("--exponent", type=float, default=None, help="integrability exponent")
    p.add_argument("--trials", type=int, default=8)
    p.set_defaults(func=cmd_gns)

    p = sub.add_parser("thresholds", help="coupling thresholds from GNS constants")
    p.add_argument("--graph", default=None)
    p.add_argument("--m", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--p", type=float, default=3.0)
    p.add_argument("--h", type=float, default=0.05)
    p.add_argument("--L", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--CK", type=float, default=None)
    p.add_argument("--CG", type=float, default=None)
    p.add_argument("--S2p2", type=float, default=None)
    p.add_argument("--Sinf", type=float, default=None)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("check-graph", help="graph-theoretic hypotheses")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check_graph)

    p = sub.add_parser("verify", help="replay and re-verify a stored report")
    p.add_argument("--report", required=True)
    p.add_argument("--fields", default=None, help="spinor CSV directory (default: beside report)")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except NumericsError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except QGDiracError as exc:  # pragma: no cover
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", EXIT_NUMERICS)


if __name__ == "__main__":
    sys.exit(main())
