"""Benchmark the compiled tensor kernels against the pure-numpy fallback.

Both backends are imported directly so a single process can time them side by
side regardless of which one the package selected at import.

Usage: python benchmarks/bench_kernels.py [--sizes 2,4,6,8] [--repeat 20000]
"""

import argparse
import importlib
import time

import numpy as np


def load_backends():
    backends = {}
    backends["numpy"] = importlib.import_module("tenfact.kernels._pykernels")
    try:
        backends["compiled"] = importlib.import_module("tenfact.kernels._ckernels")
    except ImportError:
        print("compiled backend unavailable; benchmarking the fallback only")
    return backends


def bench_one(fn, args, repeat):
    # warm up, then take the best of 5 timing blocks
    for _ in range(10):
        fn(*args)
    best = float("inf")
    chunk = max(1, repeat // 5)
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(chunk):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / chunk)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="2,4,6,8")
    ap.add_argument("--repeat", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sizes = [int(x) for x in args.sizes.split(",")]
    rng = np.random.default_rng(args.seed)
    backends = load_backends()

    ops = ["outer3_i64", "sub_outer3", "add_outer3_inplace", "max_abs", "all_zero"]
    header = f"{'op':<20}{'S':>4}" + "".join(f"{n:>14}" for n in backends) + f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for s in sizes:
        T = rng.integers(-4, 5, size=(s, s, s)).astype(np.int64)
        u = rng.integers(-2, 3, size=s).astype(np.int64)
        v = rng.integers(-2, 3, size=s).astype(np.int64)
        w = rng.integers(-2, 3, size=s).astype(np.int64)
        for op in ops:
            times = {}
            for name, mod in backends.items():
                fn = getattr(mod, op)
                if op == "outer3_i64":
                    call_args = (u, v, w)
                elif op == "sub_outer3":
                    call_args = (T, u, v, w)
                elif op == "add_outer3_inplace":
                    call_args = (T.copy(), u, v, w)
                elif op in ("max_abs", "all_zero"):
                    call_args = (T,)
                times[name] = bench_one(fn, call_args, args.repeat)
            row = f"{op:<20}{s:>4}"
            for name in backends:
                row += f"{times[name] * 1e6:>12.2f}us"
            if len(times) == 2:
                row += f"{times['numpy'] / times['compiled']:>9.1f}x"
            print(row)

    # consistency spot check between the two implementations
    if len(backends) == 2:
        py, cy = backends["numpy"], backends["compiled"]
        for _ in range(100):
            s = int(rng.integers(2, 7))
            T = rng.integers(-4, 5, size=(s, s, s)).astype(np.int64)
            u, v, w = (rng.integers(-2, 3, size=s).astype(np.int64) for _ in range(3))
            assert np.array_equal(py.outer3_i64(u, v, w), cy.outer3_i64(u, v, w))
            ra, ma = py.sub_outer3(T, u, v, w)
            rb, mb = cy.sub_outer3(T, u, v, w)
            assert np.array_equal(ra, rb) and ma == mb
        print("\nconsistency check: both backends agree on 100 random inputs")


if __name__ == "__main__":
    main()
