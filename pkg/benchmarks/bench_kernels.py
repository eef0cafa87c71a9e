"""Compiled vs numpy kernels: wall time and agreement on typical workloads.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from atomtunnel import _pykernels, kernels


def cases(rng: np.random.Generator):
    x = np.linspace(-30, 30, 4096)
    barrier = 50.0 * np.exp(-2 * x**2 / 7.0**2)
    yield ("transfer_matrices 4096 slabs x 512 E", "transfer_matrices",
           (barrier, x[1] - x[0], np.linspace(0.5, 80.0, 512)))
    yield ("transfer_matrices 256 slabs x 8192 E", "transfer_matrices",
           (barrier[::16].copy(), 16 * (x[1] - x[0]), np.linspace(-20.0, 400.0, 8192)))
    well = 0.5 * np.linspace(-8, 8, 20001) ** 2 + rng.normal(0, 1e-3, 20001)
    yield ("numerov_shoot 20001 points", "numerov_shoot", (well, 16 / 20000, 7.3, 0.0, 1e-6))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    compiled = kernels.compiled_backend
    if compiled is None:
        print("compiled extension not built; only the numpy backend is timed")
    rng = np.random.default_rng(0)
    print(f"{'case':40s} {'numpy [ms]':>11s} {'compiled [ms]':>14s} {'speedup':>8s} {'max rel diff':>13s}")
    for label, fn, a in cases(rng):
        py = getattr(_pykernels, fn)
        t_py = min(timeit.repeat(lambda: py(*a), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{label:40s} {t_py:11.2f} {'-':>14s} {'-':>8s} {'-':>13s}")
            continue
        cf = getattr(compiled, fn)
        t_c = min(timeit.repeat(lambda: cf(*a), number=1, repeat=args.repeat)) * 1e3
        r_py, r_c = py(*a), cf(*a)
        diff = max(float(np.max(np.abs(np.asarray(u) - np.asarray(v))
                                / np.maximum(np.abs(np.asarray(u)), 1e-300)))
                   for u, v in zip(r_py, r_c))
        print(f"{label:40s} {t_py:11.2f} {t_c:14.2f} {t_py / t_c:8.1f} {diff:13.1e}")


if __name__ == "__main__":
    main()
