"""Time the compiled RK4 core against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each row integrates an ensemble for ``nsteps`` substeps with both backends,
checks that the results agree, and reports the best-of-``repeat`` wall time.
"""

import argparse
import timeit

import numpy as np

from etkf_lab import _rk4_py

try:
    from etkf_lab import _rk4_ext
except ImportError:
    _rk4_ext = None


def cases(rng):
    A = -np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    yield "lorenz63  N=10   m=3 ", "rk4_lorenz63", rng.standard_normal((10, 3)) + 5.0, (10.0, 28.0, 8.0 / 3.0, 0.005, 200)
    yield "lorenz96  N=10   m=8 ", "rk4_lorenz96", 8.0 + rng.standard_normal((10, 8)), (8.0, 1e-4, 500)
    yield "lorenz96  N=40   m=40", "rk4_lorenz96", 8.0 + rng.standard_normal((40, 40)), (8.0, 0.005, 200)
    yield "linear    N=6    m=3 ", "rk4_linear", rng.standard_normal((6, 3)), (np.ascontiguousarray(A), 0.005, 200)


def best_time(fn, X0, args, repeat):
    def once():
        X = X0.copy()
        fn(X, *args)

    return min(timeit.repeat(once, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _rk4_ext is None:
        print("compiled core not built; run `python3 setup.py build_ext --inplace` first")
        return
    rng = np.random.default_rng(0)
    print(f"{'case':22s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s} {'max diff':>10s}")
    for name, kernel, X0, kargs in cases(rng):
        Xp, Xc = X0.copy(), X0.copy()
        getattr(_rk4_py, kernel)(Xp, *kargs)
        getattr(_rk4_ext, kernel)(Xc, *kargs)
        diff = float(np.abs(Xp - Xc).max())
        tp = best_time(getattr(_rk4_py, kernel), X0, kargs, args.repeat)
        tc = best_time(getattr(_rk4_ext, kernel), X0, kargs, args.repeat)
        print(f"{name:22s} {1e3 * tp:12.3f} {1e3 * tc:12.3f} {tp / tc:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
