"""Benchmark: compiled kernels vs the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]
Prints a table of per-call times and the speedup factor for each kernel on
pipeline-representative sizes.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from chickface import _kernels_py

try:
    from chickface import _kernels_c
except ImportError:
    _kernels_c = None


def timeit(fn, args, repeats):
    fn(*args)  # warmup
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def cases():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 255, size=(720, 640, 3)).astype(np.float32)
    inv = np.array([0.97, 0.26, -40.0, -0.26, 0.97, 90.0])
    yield "warp_affine_bilinear 720x640x3", "warp_affine_bilinear", (img, inv, 720, 640)

    pts = rng.uniform(0, 64, size=(7, 2))
    vis = np.ones(7, dtype=np.uint8)
    yield "render_gaussian_heatmaps 7x64x64", "render_gaussian_heatmaps", (pts, vis, 64, 64, 2.0)

    maps = rng.uniform(0, 1, size=(7, 64, 64)).astype(np.float32)
    yield "decode_peaks 7x64x64", "decode_peaks", (maps,)

    n = 200
    boxes = np.column_stack(
        [rng.uniform(0, 600, n), rng.uniform(0, 600, n), rng.uniform(10, 120, n), rng.uniform(10, 120, n)]
    )
    scores = rng.uniform(0, 1, n)
    yield "nms_keep 200 boxes", "nms_keep", (boxes, scores, 0.5)

    gray = rng.uniform(0, 255, size=(720, 640)).astype(np.float32)
    yield "laplacian_variance 720x640", "laplacian_variance", (gray,)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=10)
    args = parser.parse_args()

    if _kernels_c is None:
        print("compiled kernels not built; showing numpy fallback only")
    header = f"{'kernel':<38} {'numpy (ms)':>12} {'compiled (ms)':>14} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for label, name, call_args in cases():
        t_py = timeit(getattr(_kernels_py, name), call_args, args.repeats) * 1e3
        if _kernels_c is not None:
            t_c = timeit(getattr(_kernels_c, name), call_args, args.repeats) * 1e3
            print(f"{label:<38} {t_py:>12.3f} {t_c:>14.3f} {t_py / t_c:>8.1f}x")
        else:
            print(f"{label:<38} {t_py:>12.3f} {'-':>14} {'-':>9}")


if __name__ == "__main__":
    main()
