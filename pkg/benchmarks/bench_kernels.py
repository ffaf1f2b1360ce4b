"""Compare the compiled and numpy server kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--mb 1 4 16] [--w 8 16] [--repeats 5]

Prints one CSV row per (w, size, backend) with the best and median time and
the throughput in MB/s.  Outputs of the two backends are checked for
equality before timing.
"""
import argparse
import statistics
import sys
import time

import numpy as np

from dualring import kernels
from dualring.gf import field, word_dtype


def time_backend(backend, share, flat, block, gf, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        kernels.vecmat(share, flat, block, gf, backend=backend)
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mb", type=float, nargs="+", default=[1, 4, 16])
    ap.add_argument("--w", type=int, nargs="+", default=[8, 16])
    ap.add_argument("--rows", type=int, default=256, help="rows folded by the share")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    backends = sorted(kernels.BACKENDS)
    if "cython" not in backends:
        print("# compiled kernel not built, timing numpy only", file=sys.stderr)
    print("w,mb,backend,best_s,median_s,mb_per_s")
    for w in args.w:
        gf = field(w)
        dt = word_dtype(w)
        for mb in args.mb:
            words = int(mb * (1 << 20)) // dt.itemsize
            block = max(1, words // args.rows)
            flat = rng.integers(0, 1 << w, size=block * args.rows, dtype=np.uint64).astype(dt)
            share = rng.integers(0, 1 << w, size=args.rows, dtype=np.uint64).astype(np.uint32)
            ref = kernels.vecmat(share, flat, block, gf, backend="numpy")
            for b in backends:
                out = kernels.vecmat(share, flat, block, gf, backend=b)
                if not np.array_equal(out, ref):
                    raise SystemExit(f"backend {b} disagrees with numpy at w={w}")
                best, med = time_backend(b, share, flat, block, gf, args.repeats)
                print(f"{w},{mb:g},{b},{best:.6f},{med:.6f},{flat.nbytes / (1 << 20) / best:.1f}")


if __name__ == "__main__":
    main()
