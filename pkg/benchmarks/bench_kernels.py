"""Compare the compiled and numpy paths of the accelerator kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 100000]

Each kernel is run through its public entry point with the compiled path on
and off (the same switch ``DUETSIM_DISABLE_NUMBA=1`` flips at import time),
the outputs are checked for equality, and the best wall time of each path is
printed.  The first compiled call, which includes JIT compilation, is
excluded.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from duetsim.accel import kernels


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(size: int, rng: np.random.Generator):
    x = rng.uniform(-1.6, 1.6, size)
    words = rng.integers(0, 2**63, size=(size // 8, 8), dtype=np.int64).astype(np.uint64)
    keys = rng.integers(0, 2**32, size=(max(size // 128, 1), 128), dtype=np.int64).astype(np.uint32)
    targets = rng.normal(size=(max(size // 64, 1), 3))
    sources = rng.normal(size=(max(size // 64, 1), 3))
    masses = rng.uniform(0.5, 2.0, size=len(sources))
    return {
        "tangent": lambda: kernels.tangent(x)[0],
        "popcount512": lambda: kernels.popcount_rows(words),
        "sort_network/128": lambda: kernels.sort_network(keys),
        "pair_forces": lambda: kernels.pair_forces(targets, sources, masses),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=100_000, help="tangent arguments; other kernels scale from it")
    args = ap.parse_args(argv)
    if kernels.numba is None:
        raise SystemExit("numba is not installed; only the numpy path exists")

    print(f"{'kernel':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, fn in cases(args.size, np.random.default_rng(0)).items():
        saved = kernels.USE_NUMBA
        try:
            kernels.USE_NUMBA = False
            ref = fn()
            t_np = _best(fn, args.repeat)
            kernels.USE_NUMBA = True
            got = fn()  # compiles
            t_nb = _best(fn, args.repeat)
        finally:
            kernels.USE_NUMBA = saved
        if not np.allclose(np.asarray(ref, dtype=np.float64), np.asarray(got, dtype=np.float64), rtol=1e-12, equal_nan=True):
            raise SystemExit(f"{name}: compiled and numpy paths disagree")
        print(f"{name:<18} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
