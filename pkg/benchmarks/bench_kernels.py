"""Compare the compiled and numpy kernels on representative workloads.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from pdrci import kernels


def workloads(seed=0):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((16, 2))
    g = np.ones(16)
    X = rng.uniform(-2, 2, size=(200_000, 2))
    N, nx, nu, nw, nz, R, T = 2, 2, 1, 1, 3, 100, 200
    A = 0.5 * rng.standard_normal((N, nx, nx))
    B = rng.standard_normal((N, nx, nu))
    E = rng.standard_normal((N, nx, nw))
    C = rng.standard_normal((N, nz, nx))
    D = rng.standard_normal((N, nz, nu))
    K = 0.1 * rng.standard_normal((N, nu, nx))
    x0 = rng.standard_normal((R, nx))
    xi = rng.dirichlet(np.ones(N), size=(R, T))
    w = np.zeros((R, T, nw))
    return {
        "max_violation 200k x 16": lambda m: m.max_violation(F, g, X),
        "count_inside 200k x 16": lambda m: m.count_inside(F, g, X, 0.0),
        "rollout_lpv 100 x 200": lambda m: m.rollout_lpv(A, B, E, C, D, K, x0, xi, w),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    impls = kernels.implementations()
    if "cython" not in impls:
        print("compiled kernels not built; only the numpy fallback is available")
    print(f"{'workload':28s}" + "".join(f"{name:>14s}" for name in impls) + "   speedup")
    for label, fn in workloads().items():
        times = {name: min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
                 for name, mod in impls.items()}
        line = f"{label:28s}" + "".join(f"{t * 1e3:12.2f}ms" for t in times.values())
        if "cython" in times:
            line += f"   {times['python'] / times['cython']:7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
