#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

Both flavours are called directly, so one process covers both regardless of
GLMD_DISABLE_NUMBA. Outputs a table, or JSON with --json.

    python benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import json
import math
import sys
import time

import numpy as np

from glmdiar import _accel, margin_loss, numerics


def best_of(fn, repeat, warmup=1):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(rng, scale):
    n = 60 * scale
    a = rng.normal(size=(n, n))
    a = 0.5 * (a + a.T)
    pts = rng.normal(size=(4000 * scale, 16))
    cen = rng.normal(size=(8, 16))
    grid = np.linspace(0.0, math.pi, 200_001 * scale)
    b, c, d = 512 * scale, 40, 32
    x = rng.normal(size=(b, d))
    w = rng.normal(size=(c, d))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    t = rng.integers(c, size=b)
    ones = np.ones(b)
    m = (1.05 * ones, 0.08 * ones, 0.02 * ones)
    tol, sweeps = numerics.JACOBI_TOL, numerics.MAX_SWEEPS
    return [
        (f"jacobi {n}x{n}",
         lambda: numerics._jacobi_cyclic(a.copy(), tol, sweeps),
         lambda: numerics._jacobi_roundrobin(a.copy(), tol, sweeps)),
        (f"kmeans assign {pts.shape[0]}x8",
         lambda: numerics._assign_loop(pts, cen),
         lambda: numerics._assign_numpy(pts, cen)),
        (f"psi grid {grid.size}",
         lambda: margin_loss._psi_loop(grid, 1.05, 0.08, 0.02),
         lambda: margin_loss._psi_numpy(grid, 1.05, 0.08, 0.02)),
        (f"glm batch {b}x{c}x{d}",
         lambda: margin_loss._glm_batch_loop(x, w, t, *m, False, margin_loss.SIN_FLOOR),
         lambda: margin_loss._glm_batch_numpy(x, w, t, *m, False, margin_loss.SIN_FLOOR)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=int, default=1, help="problem size multiplier")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)

    compiled = hasattr(numerics._assign_loop, "py_func")
    if not compiled:
        print("numba unavailable or disabled; timing the numpy kernels only", file=sys.stderr)
    rows = []
    for name, jit_fn, np_fn in cases(np.random.default_rng(args.seed), args.scale):
        t_np = best_of(np_fn, args.repeat)
        t_jit = best_of(jit_fn, args.repeat) if compiled else math.nan
        rows.append({"kernel": name, "numba_s": t_jit, "numpy_s": t_np,
                     "speedup": t_np / t_jit if compiled else math.nan})

    if args.json:
        print(json.dumps({"backend": _accel.backend_name(), "results": rows}, indent=2))
        return 0
    print(f"{'kernel':<28}{'numba ms':>12}{'numpy ms':>12}{'numpy/numba':>14}")
    for r in rows:
        print(f"{r['kernel']:<28}{1e3 * r['numba_s']:>12.3f}{1e3 * r['numpy_s']:>12.3f}"
              f"{r['speedup']:>14.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
