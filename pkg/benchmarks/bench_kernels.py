"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--sizes 1000 10000 100000] [--repeat 5]

Prints one row per (kernel, size) with the best-of-repeat time of each
backend and the speedup of the compiled one.
"""

import argparse
import timeit

import numpy as np

from zisae import kernels


def inputs(n, J=20, p=3, seed=0):
    rng = np.random.default_rng(seed)
    codes = np.sort(rng.integers(0, J, n))
    X = np.c_[np.ones(n), rng.normal(size=(n, p - 1))]
    eta = X @ rng.normal(size=p) + rng.normal(size=J)[codes]
    z = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    coef = [rng.normal(size=p), rng.normal(size=J), rng.normal(size=p), rng.normal(size=J)]
    return X, rng.normal(size=n), z, codes, J, coef


def calls(backend, X, y, z, codes, J, coef):
    gamma, u, delta, w = coef
    return {
        "group_stats": lambda: backend.group_stats(X, y, codes, J),
        "laplace_logit": lambda: backend.laplace_logit(X, z, codes, J, delta, 0.0, np.zeros(J), 1e-10, 50),
        "zi_area_means": lambda: backend.zi_area_means(X, gamma, u, delta, w, codes, J),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    names = kernels.available_backends()
    print(f"backends: {', '.join(names)} (active: {kernels.BACKEND})")
    print(f"{'kernel':<15}{'units':>9}" + "".join(f"{b + ' ms':>12}" for b in names)
          + ("   speedup" if len(names) == 2 else ""))
    for n in args.sizes:
        data = inputs(n)
        per_backend = {b: calls(kernels.get_backend(b), *data) for b in names}
        for kernel in per_backend[names[0]]:
            best = {}
            for b in names:
                fn = per_backend[b][kernel]
                number = max(1, 20_000 // n)
                best[b] = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
            row = f"{kernel:<15}{n:>9}" + "".join(f"{best[b] * 1e3:>12.3f}" for b in names)
            if len(names) == 2:
                row += f"{best['python'] / best['cython']:>9.1f}x"
            print(row)


if __name__ == "__main__":
    main()
