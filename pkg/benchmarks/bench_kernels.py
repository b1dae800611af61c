"""Time each kernel under both backends.

    python benchmarks/bench_kernels.py [--repeat 20] [--size 100000]

The numba column excludes compilation: every kernel is called once before timing.
"""
import argparse
import timeit

import numpy as np

from shiftpi import _kernels


def cases(size, rng):
    cum = np.cumsum(rng.random(2000))
    cum /= cum[-1]
    u = rng.random(size)
    phi = rng.normal(size=size)
    w = rng.random(size) + 0.5
    Z = rng.normal(size=(size // 10, 8))
    lam = rng.normal(scale=0.1, size=8)
    tx, ty, qx = rng.normal(size=(2000, 4)), rng.normal(size=2000), rng.normal(size=(500, 4))
    return {
        "sample_counts": (cum, u),
        "sample_indices": (cum, u),
        "tilted_stats": (phi, w, 0.7),
        "balance_terms": (Z, lam),
        "knn_mean": (tx, ty, qx, 10),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--size", type=int, default=100_000)
    args = ap.parse_args()
    backends = {"numpy": _kernels.numpy_impl}
    if _kernels.numba_impl is not None:
        backends["numba"] = _kernels.numba_impl
    inputs = cases(args.size, np.random.default_rng(0))
    print(f"active backend: {_kernels.BACKEND}; times are ms per call (best of {args.repeat})")
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, call_args in inputs.items():
        times = {}
        for b, impl in backends.items():
            fn = getattr(impl, name)
            fn(*call_args)
            times[b] = 1e3 * min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
        speed = f"{times['numpy'] / times['numba']:>9.1f}x" if "numba" in times else ""
        print(f"{name:<16}" + "".join(f"{t:>12.3f}" for t in times.values()) + speed)


if __name__ == "__main__":
    main()
