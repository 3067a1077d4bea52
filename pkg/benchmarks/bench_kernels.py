"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--m 129]

The first numba call compiles (or loads the on-disk cache) and is excluded.
"""

import argparse
import time

import numpy as np

from schauderlab import _kernels as K


def best_of(fn, repeat):
    fn()  # warm-up / compilation
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def cases(m):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((m, m))
    v = rng.standard_normal((33, 33, 2))
    ker = rng.standard_normal((15, 15))
    offs = K.half_space_offsets((33, 33))
    yield "box_means k=8", lambda b: K.box_means(a, 8, backend=b)
    yield "box_stats k=4", lambda b: K.box_stats(v, 2, 4, backend=b)
    yield "convolve 15x15", lambda b: K.convolve_direct(a, ker, backend=b)
    yield "holder 33x33 all pairs", lambda b: K.holder_over_offsets(v, 2, 1 / 32, 0.5, offs, backend=b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--m", type=int, default=129)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba unavailable; nothing to compare")
        return
    print(f"{'kernel':28s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s}")
    for name, fn in cases(args.m):
        tn = best_of(lambda: fn("numba"), args.repeat)
        tp = best_of(lambda: fn("numpy"), args.repeat)
        print(f"{name:28s} {1e3 * tn:11.3f} {1e3 * tp:11.3f} {tp / tn:9.1f}")


if __name__ == "__main__":
    main()
