"""Benchmark the compiled kernels against the numpy fallback.

Times the three hot paths (columnwise OLS with p-values, separable
convolution, component labeling) plus an end-to-end Monte Carlo threshold,
on both backends, and reports the speedup.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import math
import time

import numpy as np

from corsem._kernels import compiled_available, get_backend, pyfallback
from corsem.core import VolumeGeometry
from corsem.correct import mc_cluster_threshold


def timeit(fn, repeats=3):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_ols(mod, n, v):
    rng = np.random.default_rng(0)
    y = rng.normal(0, 1, (n, v)).astype(np.float32)
    x = (rng.random(n) < 0.5).astype(np.float64)
    xbar = x.mean()
    vx = float(((x - xbar) ** 2).sum())
    outs = [np.empty(v) for _ in range(5)]
    flags = np.empty(v, dtype=np.uint8)
    p = np.empty(v)
    df = float(n - 2)
    ln_beta = (math.lgamma(df / 2) + math.lgamma(0.5)
               - math.lgamma(df / 2 + 0.5))

    def run():
        for v0 in range(0, v, 2048):
            v1 = min(v0 + 2048, v)
            mod.ols_columns(x, xbar, vx, y[:, v0:v1],
                            *[o[v0:v1] for o in outs], flags[v0:v1])
            mod.t_pvalues(outs[3][v0:v1], df, ln_beta, p[v0:v1])

    return timeit(run)


def bench_convolve(mod, shape=(64, 64, 64)):
    rng = np.random.default_rng(1)
    f = rng.normal(0, 1, shape)
    k = np.exp(-0.5 * (np.arange(-6, 7) / 1.27) ** 2)
    k /= k.sum()
    out = np.empty_like(f)

    def run():
        cur = f
        for axis in range(3):
            mod.convolve_axis(cur, k, axis, out)
            cur = out.copy()

    return timeit(run)


def bench_label(mod, shape=(64, 64, 64)):
    rng = np.random.default_rng(2)
    nx, ny, nz = shape
    supra = (rng.random(nx * ny * nz) < 0.3).astype(np.uint8)
    labels = np.empty(supra.size, dtype=np.int64)

    def run():
        mod.label_components(supra, nx, ny, nz, 6, labels)

    return timeit(run)


def bench_mc(backend_name, iterations):
    import os

    os.environ.pop("CORSEM_FORCE_PYTHON", None)
    geom = VolumeGeometry((16, 16, 16), (3.0, 3.0, 3.0),
                          np.ones(16 ** 3, bool))
    # temporarily monkey-patch the kernel dispatch used by correct
    import corsem._kernels as K
    mod = get_backend(backend_name)
    saved = (K.ols_columns, K.convolve_axis, K.label_components, K.t_pvalues)
    K.convolve_axis = mod.convolve_axis
    K.label_components = mod.label_components
    try:
        t0 = time.perf_counter()
        mc_cluster_threshold(geom, 3.0, 0.05, None, 6, iterations, 0.05, 0)
        return time.perf_counter() - t0
    finally:
        (K.ols_columns, K.convolve_axis, K.label_components, K.t_pvalues) = saved


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true",
                        help="smaller problem sizes")
    args = parser.parse_args()

    if not compiled_available():
        print("compiled extension unavailable; nothing to compare")
        return

    compiled = get_backend("compiled")
    n, v = (200, 10_000) if args.quick else (1000, 50_000)
    label_shape = (32, 32, 32) if args.quick else (64, 64, 64)
    mc_iters = 100 if args.quick else 400

    rows = []
    rows.append(("ols+p  (%dx%d)" % (n, v),
                 bench_ols(pyfallback, n, v), bench_ols(compiled, n, v)))
    rows.append(("convolve (64^3 x 3 axes)",
                 bench_convolve(pyfallback), bench_convolve(compiled)))
    rows.append(("label  %s" % (label_shape,),
                 bench_label(pyfallback, label_shape),
                 bench_label(compiled, label_shape)))
    rows.append(("mc-threshold (%d iter)" % mc_iters,
                 bench_mc("python", mc_iters), bench_mc("compiled", mc_iters)))

    print(f"{'kernel':<28} {'python':>10} {'compiled':>10} {'speedup':>9}")
    for name, t_py, t_cy in rows:
        print(f"{name:<28} {t_py:>9.3f}s {t_cy:>9.3f}s {t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
