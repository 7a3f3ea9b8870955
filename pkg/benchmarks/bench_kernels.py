"""Compare the compiled kernels with the pure-Python fallback.

Each kernel runs on identical inputs in both implementations; outputs are
checked for agreement before timing. Usage:

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import math
import sys
import timeit

import numpy as np

from sqmap import _kernels_py

try:
    from sqmap import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def _inputs(seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.normal(0.0, 0.15, (2000, 3))
    cloud = rng.normal(0.0, 0.1, (256, 3))
    n_trees, psi = 100, len(cloud)
    sub = np.tile(np.arange(psi, dtype=np.int64), (n_trees, 1))
    normals = rng.standard_normal((n_trees, psi - 1, 3))
    uniforms = rng.random((n_trees, psi - 1))
    axis = np.linspace(0.1, 1.9, 10)
    e1s, e2s = (g.ravel().copy() for g in np.meshgrid(axis, axis, indexing="ij"))
    w = np.linspace(0.0, 1.0, 300)
    depth = int(math.ceil(math.log2(psi)))
    forest = _kernels_py.build_forest(cloud, sub, normals, uniforms, depth)
    return {
        "radial_distance": (lambda k: k.radial_distance(pts, 0.2, 0.15, 0.1, 0.3, 0.7)),
        "grid_costs": (lambda k: k.grid_costs(pts[:300], w, 0.2, 0.15, 0.1, e1s, e2s)),
        "build_forest": (lambda k: k.build_forest(cloud, sub, normals, uniforms, depth)),
        "mean_path_length": (lambda k: k.mean_path_length(cloud, *forest)),
        "self_path_length": (lambda k: k.self_path_length(cloud, normals, uniforms, depth)),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timing repeats (best is reported)")
    parser.add_argument("--json", default=None, help="write results as JSON")
    args = parser.parse_args(argv)
    if _compiled is None:
        print("compiled extension not available; only the fallback can be timed", file=sys.stderr)

    rows = []
    for name, fn in _inputs().items():
        py_out = fn(_kernels_py)
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        row = {"kernel": name, "python_ms": t_py * 1e3}
        if _compiled is not None:
            c_out = fn(_compiled)
            row["agree"] = bool(_same(c_out, py_out))
            number = 10
            t_c = min(timeit.repeat(lambda: fn(_compiled), number=number, repeat=args.repeat)) / number
            row["compiled_ms"] = t_c * 1e3
            row["speedup"] = t_py / t_c
        rows.append(row)

    print(f"{'kernel':<18}{'python ms':>12}{'compiled ms':>13}{'speedup':>10}  agree")
    for r in rows:
        c = f"{r['compiled_ms']:13.3f}{r['speedup']:9.1f}x  {r['agree']}" if "compiled_ms" in r else "            -         -  -"
        print(f"{r['kernel']:<18}{r['python_ms']:12.3f}{c}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r.get("agree", True) for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
