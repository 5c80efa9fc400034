"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends must return bitwise-equal arrays; the script checks that
before it reports any timing.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from mfglab import _fallback, kernels


def cases():
    rng = np.random.default_rng(0)
    for N in (400, 1600, 6400):
        eps = N ** -0.4
        pos = rng.normal(size=(N, 1))
        yield f"cells   d=1 N={N}", "profile_sums_cells", (pos, 1 / eps, eps)
        yield f"direct  d=1 N={N}", "profile_sums_direct", (pos, 1 / eps)
        yield f"deposit d=1 N={N} n=1024", "deposit", (pos, 8.0, 16.0 / 1024, 1024, eps, 1 / eps, True, 0.0)
    N = 1600
    eps = N ** -0.2
    pos = rng.normal(size=(N, 2))
    yield f"cells   d=2 N={N}", "profile_sums_cells", (pos, 1 / eps, eps)
    yield f"deposit d=2 N={N} n=64", "deposit", (pos, 4.0, 8.0 / 64, 64, eps, 1 / eps, True, 0.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    compiled = kernels.backends().get("cython")
    if compiled is None:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`")
        return 1
    print(f"{'case':<28}{'cython ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for label, name, a in cases():
        fc, fn = getattr(compiled, name), getattr(_fallback, name)
        if not np.array_equal(fc(*a), fn(*a)):
            print(f"{label:<28} MISMATCH between backends")
            return 1
        tc = min(timeit.repeat(lambda: fc(*a), number=1, repeat=args.repeat)) * 1e3
        tn = min(timeit.repeat(lambda: fn(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:<28}{tc:>12.2f}{tn:>12.2f}{tn / tc:>10.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
