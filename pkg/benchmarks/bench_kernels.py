"""Time the compiled and pure-Python Stieltjes kernels on the same density sweep.

Usage: python benchmarks/bench_kernels.py [--points N] [--nodes K] [--repeat R]
"""

import argparse
import time

import numpy as np

from glmcomplexity import _kernels_py
from glmcomplexity.activations import builtin
from glmcomplexity.measures import gauss_hermite, pushforward

try:
    from glmcomplexity import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=601)
    ap.add_argument("--nodes", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    law = pushforward(gauss_hermite(args.nodes), builtin("tanh").d2)
    w, p = np.ascontiguousarray(law.weights), np.ascontiguousarray(law.nodes)
    z = np.linspace(-1, 5, args.points) + 1e-6j
    g0 = np.zeros_like(z)
    print(f"tanh law, {args.nodes} atoms, {args.points} points, alpha=2, best of {args.repeat}")
    rows = [("python", _kernels_py)] + ([("compiled", _ckernels)] if _ckernels else [])
    results = {}
    for warm in (True, False):
        for name, mod in rows:
            dt, out = best_of(lambda: mod.solve_stieltjes_batch(w, p, 2.0, z, g0, 1e-12, 10000, warm),
                              args.repeat)
            results[name, warm] = (dt, out[0])
            print(f"  {name:8s} {'warm' if warm else 'cold'}: {dt * 1e3:9.2f} ms")
        if _ckernels:
            py, c = results["python", warm], results["compiled", warm]
            print(f"  speedup {py[0] / c[0]:.1f}x, max |g_c - g_py| = {np.max(np.abs(py[1] - c[1])):.1e}")
    if not _ckernels:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")


if __name__ == "__main__":
    main()
