#!/usr/bin/env python3
"""Benchmark the numba-jitted stencil kernels against the numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py [--size 64 128 256] [--repeat 200]

The first numba call per kernel compiles (cached to __pycache__); timings
exclude compilation.  Representative output feeds the decision of keeping
numba as the default path (HEAVYFLOW_NUMBA=0 opts out).
"""

import argparse
import time

import numpy as np

from heavyflow import _kernels

CASES = [
    ("div_slip", lambda a: (a["u"], a["v"], a["hx"], a["hy"])),
    ("grad_slip", lambda a: (a["s"], a["hx"], a["hy"])),
    ("curl_nodes_slip", lambda a: (a["u"], a["v"], a["hx"], a["hy"])),
    ("transport_apply", lambda a: (a["s"], a["u"], a["v"], a["hx"], a["hy"])),
    ("advect_u", lambda a: (a["u"], a["u"], a["v"], a["hx"], a["hy"])),
    ("advect_v", lambda a: (a["v"], a["u"], a["v"], a["hx"], a["hy"])),
]


def make_arrays(n, rng):
    return {"u": rng.normal(size=(n + 1, n)), "v": rng.normal(size=(n, n + 1)),
            "s": rng.normal(size=(n, n)), "hx": 1.0 / n, "hy": 1.0 / n}


def time_call(fn, args, repeat):
    fn(*args)  # warm (and compile, for the jitted variant)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()

    if not _kernels.HAS_NUMBA:
        print("numba not importable; only the numpy path is available")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<18} {'n':>5} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for n in args.size:
        arrays = make_arrays(n, rng)
        for name, pack in CASES:
            packed = pack(arrays)
            t_np = time_call(_kernels.get_kernel(name, use_numba=False),
                             packed, args.repeat)
            if _kernels.HAS_NUMBA:
                t_nb = time_call(_kernels.get_kernel(name, use_numba=True),
                                 packed, args.repeat)
                print(f"{name:<18} {n:>5} {t_np * 1e6:>10.1f} {t_nb * 1e6:>10.1f} "
                      f"{t_np / t_nb:>8.2f}")
            else:
                print(f"{name:<18} {n:>5} {t_np * 1e6:>10.1f} {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
