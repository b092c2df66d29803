"""Time the nonlinearity kernels under both backends.

    python benchmarks/bench_kernels.py [--h 0.01] [--L 40] [--repeat 20]

Times Ψ, ∇Ψ, Hessian-vector and Hessian-triplet evaluation on the
half-cell quadrature of the tadpole, then one direct Newton solve end to end.
"""
import argparse
import math
import os
import timeit

import numpy as np

from qgdirac import dirac_core as dc
from qgdirac import functionals as fn
from qgdirac import graph_model as gm
from qgdirac import kernels as K
from qgdirac import solver as sv


def bench(op, repeat):
    node, cell, w = op.disc.quadrature(gm.CoreUnionSegment("H", op.grid.truncation("H", op.params)))
    rng = np.random.default_rng(0)
    u = rng.standard_normal(op.N)
    d = rng.standard_normal(op.N)
    calls = {
        "psi_sum": lambda: K.psi_sum(u, node, cell, w, 3.0),
        "psi_grad": lambda: K.psi_grad(u, node, cell, w, 3.0),
        "psi_hessvec": lambda: K.psi_hessvec(u, d, node, cell, w, 3.0),
        "psi_hess_coo": lambda: K.psi_hess_coo(u, node, cell, w, 3.0),
    }
    out = {}
    for name, f in calls.items():
        f()  # compile / warm up
        out[name] = min(timeit.repeat(f, number=repeat, repeat=3)) / repeat
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--h", type=float, default=0.01)
    ap.add_argument("--L", type=float, default=40.0)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    op = dc.assemble_dirac(gm.tadpole(), dc.DiracParams(1, 1), dc.Grid(h=args.h, L=args.L))
    spec = fn.NonlinearitySpec(a=0.1, p=3.0)
    seed = dc.build_phi_b(op, 0.05)
    seed = seed / math.sqrt(op.disc.mass(seed))
    res = {}
    for be in ("numpy", "numba"):
        os.environ["QGDIRAC_BACKEND"] = be
        if K.backend() != be:
            print(f"{be}: unavailable")
            continue
        res[be] = bench(op, args.repeat)
        sv.direct_solve(op, spec, "mass", seed, omega0=0.9)
        res[be]["direct_solve"] = min(timeit.repeat(
            lambda: sv.direct_solve(op, spec, "mass", seed, omega0=0.9), number=1, repeat=3))
    print(f"tadpole h={args.h} L={args.L}: N={op.N}")
    print(f"{'kernel':>14}  {'numpy [ms]':>11}  {'numba [ms]':>11}  {'speedup':>8}")
    for k in res.get("numpy", {}):
        a = res["numpy"][k] * 1e3
        b = res.get("numba", {}).get(k, float("nan")) * 1e3
        print(f"{k:>14}  {a:11.4f}  {b:11.4f}  {a / b:8.2f}")


if __name__ == "__main__":
    main()
