"""Compiled kernels against the NumPy fallback.

Times three workloads per backend and checks that both backends agree:

* ``solid_angle_many`` on random panels and points;
* building the fast-operator plan (dual traversal) on a uniform tree;
* one Galerkin matrix-vector product with the stored plan.

Usage::

    python benchmarks/bench_kernels.py [--surface fichera] [--levels 4] [--repeat 3] [--threads 1]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from awbem import _backend
from awbem.basis import uniform_tree
from awbem.layer import ApplyParams, GalerkinOperator
from awbem.surface import make_surface


def best_of(fn, repeat: int) -> tuple:
    """Minimum wall time over ``repeat`` calls and the last result."""
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_backend(name: str, args) -> dict:
    k = _backend.get(name)
    rng = np.random.default_rng(0)
    n = args.panels
    c0, h1, h2 = (rng.normal(size=(n, 3)) for _ in range(3))
    x = 3.0 * rng.normal(size=(n, 3))
    t_sa, sa = best_of(lambda: np.asarray(k.solid_angle_many(c0, h1, h2, x)), args.repeat)

    surface = make_surface(args.surface)
    keys = uniform_tree(surface.n_patches, args.levels).keys
    params = ApplyParams(backend=name, threads=args.threads)
    t_plan, op = best_of(lambda: GalerkinOperator(surface, keys, params), args.repeat)
    v = np.random.default_rng(1).normal(size=keys.size)
    t_mv, w = best_of(lambda: op.matvec(v), args.repeat)
    return {"solid_angle": (t_sa, sa), "plan": (t_plan, None), "matvec": (t_mv, w), "dofs": keys.size}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--surface", default="fichera", choices=["fichera", "cube"])
    p.add_argument("--levels", type=int, default=4, help="uniform tree depth (levels 0..LEVELS-1)")
    p.add_argument("--panels", type=int, default=200_000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args(argv)

    names = _backend.available()
    if "compiled" not in names:
        print("compiled extension not built; timing the fallback only")
    results = {name: bench_backend(name, args) for name in names}
    dofs = results["python"]["dofs"]
    print(f"{args.surface}, uniform tree with {dofs} indices, {args.threads} thread(s), best of {args.repeat}")
    print(f"{'workload':<14}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for work in ("solid_angle", "plan", "matvec"):
        times = [results[n][work][0] for n in names]
        line = f"{work:<14}" + "".join(f"{t:>11.3f}s" for t in times)
        if len(names) > 1:
            line += f"{times[0] / times[1]:>11.1f}x"
        print(line)
    if len(names) > 1:
        a, b = results["python"], results["compiled"]
        d_sa = float(np.max(np.abs(a["solid_angle"][1] - b["solid_angle"][1])))
        w_a, w_b = a["matvec"][1], b["matvec"][1]
        d_mv = float(np.linalg.norm(w_a - w_b) / np.linalg.norm(w_a))
        print(f"max solid angle difference {d_sa:.1e}; relative matvec difference {d_mv:.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
