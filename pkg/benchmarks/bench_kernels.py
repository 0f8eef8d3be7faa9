"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Both implementations are called directly, so the result does not depend on
``TACTILEMAP_DISABLE_NUMBA``. Each pair is also checked for equal output.
"""

import argparse
import json
import time

import numpy as np
from scipy.ndimage import gaussian_filter

from tactilemap import kernels


def _timeit(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _cleared(fn, img):
    img = img.copy()  # the kernels work in place
    fn(img)
    return img


def cases(rng):
    mask = gaussian_filter(rng.standard_normal((384, 384)), 3) > 0.05
    h = rng.standard_normal((512, 512)).astype(np.float64)
    rows = rng.integers(0, 512, 5000)
    cols = rng.integers(0, 512, 5000)
    dr, dc = kernels.disk_offsets(30)
    ranks2 = np.arange(2, 2 * 22 + 1, 2, dtype=np.int64)
    thin = kernels.zhang_suen_numpy(mask)
    return {
        "zhang_suen 384^2": (lambda: kernels.zhang_suen_numba(mask), lambda: kernels.zhang_suen_numpy(mask)),
        "clear_blocks 384^2": (lambda: _cleared(kernels.clear_blocks_numba, thin),
                               lambda: _cleared(kernels.clear_blocks_numpy, thin)),
        "disk_max r=30 x5000": (lambda: kernels.disk_max_numba(h, rows, cols, dr, dc),
                                lambda: kernels.disk_max_numpy(h, rows, cols, dr, dc)),
        "signed_rank_counts n=22": (lambda: kernels.signed_rank_counts_numba(ranks2),
                                    lambda: kernels.signed_rank_counts_numpy(ranks2)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    rows = []
    print(f"{'kernel':26s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}  equal")
    for name, (fa, fb) in cases(np.random.default_rng(args.seed)).items():
        equal = bool(np.array_equal(np.asarray(fa()), np.asarray(fb())))
        ta, tb = _timeit(fa, args.repeat), _timeit(fb, args.repeat)
        rows.append({"kernel": name, "numba_s": ta, "numpy_s": tb, "speedup": tb / ta, "equal": equal})
        print(f"{name:26s} {ta:10.4f} {tb:10.4f} {tb / ta:8.1f}  {equal}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return rows


if __name__ == "__main__":
    main()
