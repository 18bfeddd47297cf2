"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 3] [--grid 200] [--items 100000]
"""
import argparse
import timeit

import numpy as np

from wdfaudit import kernels


def sweep_case(n, rng):
    phi = np.full((1, n, n), np.inf)
    frozen = np.zeros(phi.shape, dtype=np.uint8)
    seeds = (np.zeros(8, int), rng.integers(0, n, 8), rng.integers(0, n, 8))
    phi[seeds] = 0.0
    frozen[seeds] = 1
    return phi, frozen


def knapsack_case(n, rng):
    cost = rng.exponential(1.0, n)
    order = rng.permutation(n)
    return order, cost, 0.5 * cost.sum()


def bench(label, fn, repeat):
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(f"  {label:<8s} {best * 1e3:10.2f} ms")
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--grid", type=int, default=200, help="side of the square sweep grid")
    ap.add_argument("--items", type=int, default=100_000, help="knapsack items")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    backends = ["python"] + (["cython"] if kernels.HAVE_CYTHON else [])
    if not kernels.HAVE_CYTHON:
        print("compiled extension not built; timing the fallback only")

    phi, frozen = sweep_case(args.grid, rng)
    print(f"fast_sweep on a {args.grid}x{args.grid} grid")
    sweep = {}
    for b in backends:
        sweep[b] = bench(b, lambda: kernels.fast_sweep(phi.copy(), frozen, 0.01, backend=b), args.repeat)

    order, cost, cap = knapsack_case(args.items, rng)
    print(f"greedy_fill with {args.items} items")
    fill = {}
    for b in backends:
        fill[b] = bench(b, lambda: kernels.greedy_fill(order, cost, cap, backend=b), args.repeat)

    if len(backends) == 2:
        print(f"speedup: sweep {sweep['python'] / sweep['cython']:.1f}x, "
              f"greedy {fill['python'] / fill['cython']:.1f}x")
        a, _ = kernels.fast_sweep(phi.copy(), frozen, 0.01, backend="python")
        b, _ = kernels.fast_sweep(phi.copy(), frozen, 0.01, backend="cython")
        print(f"outputs identical: {np.array_equal(a, b)}")


if __name__ == "__main__":
    main()
