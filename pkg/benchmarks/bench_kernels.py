"""Wall-clock comparison of the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Inputs are sized like one rendered 320x240 frame and one 176 px raster.
The first numba call (JIT compile) is excluded from the timings.
"""
import argparse
import time

import numpy as np

from handkin import kernels
from handkin._accel import HAVE_NUMBA


def workloads(rng):
    n = 22
    a = np.column_stack([rng.uniform(-40, 40, (n, 2)), rng.uniform(380, 450, n)])
    b = a + rng.normal(0, 25, (n, 3))
    r = rng.uniform(4, 10, n)
    boxes = np.tile(np.array([0, 319, 0, 239], dtype=np.int64), (n, 1))
    pts = rng.uniform(-150, 150, (20000, 3))
    img = rng.uniform(-1, 1, (176, 176))
    valid = rng.random((176, 176)) < 0.3
    c, s = np.cos(0.4) * 1.1, np.sin(0.4) * 1.1
    aff = np.array([[c, -s, 88 - 88 * c + 88 * s], [s, c, 88 - 88 * s - 88 * c]])
    return {
        "render_capsules": (240, 320, 475.0, 475.0, 160.0, 120.0, a, b, r, boxes),
        "splat_min": (pts, 176, 300.0),
        "masked_median3x3": (img, valid),
        "warp_bilinear": (img, valid, aff, 176, 176, 0.5),
    }


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    loads = workloads(np.random.default_rng(0))
    print(f"{'kernel':<18}" + "".join(f"{b + ' ms':>12}" for b in backends) + ("   speedup" if len(backends) == 2 else ""))
    for name in kernels.KERNELS:
        row = []
        for backend in backends:
            fn = kernels.implementation(name, backend)
            fn(*loads[name])  # warm-up, includes JIT compile for numba
            row.append(best_of(fn, loads[name], args.repeat) * 1e3)
        extra = f"{row[0] / row[1]:>9.1f}x" if len(row) == 2 else ""
        print(f"{name:<18}" + "".join(f"{t:>12.2f}" for t in row) + extra)


if __name__ == "__main__":
    main()
