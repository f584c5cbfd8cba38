"""Compare the numba and pure-numpy geometry kernel backends.

Run without ANOMALYKIT_DISABLE_NUMBA so both implementations are importable;
the numba variants are warmed up once before timing to exclude JIT cost.

    python3 benchmarks/bench_kernels.py
"""

from __future__ import annotations

import time

import numpy as np

from anomalykit import kernels


def make_boxes(n: int, rng: np.random.Generator):
    centers = rng.uniform(0.0, 10.0, size=(n, 3))
    halves = rng.uniform(0.05, 0.5, size=(n, 1))
    return centers - halves, centers + halves


def bench(label: str, fn, args, repeats: int):
    fn(*args)  # warm-up (JIT compile for the numba variants)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    print(f"  {label:<10} {best * 1e6:10.1f} us")
    return best


def main():
    if not kernels.HAVE_NUMBA:
        print("numba backend unavailable (ANOMALYKIT_DISABLE_NUMBA set or "
              "numba missing); nothing to compare")
        return
    rng = np.random.default_rng(0)

    for n in (10, 100, 1000):
        mins, maxs = make_boxes(n, rng)
        p0 = np.array([0.0, 0.0, 0.0])
        p1 = np.array([10.0, 10.0, 10.0])
        print(f"segment_hits_any_box, {n} boxes:")
        t_np = bench("numpy", kernels._segment_hits_any_box_np,
                     (p0, p1, mins, maxs, 1e-3), repeats=200)
        t_nb = bench("numba", kernels._segment_hits_any_box_nb,
                     (p0, p1, mins, maxs, 1e-3), repeats=200)
        print(f"  speedup    {t_np / t_nb:10.1f}x")

    for n in (10, 100, 300):
        mins, maxs = make_boxes(n, rng)
        print(f"pairwise_overlap_depths, {n} boxes:")
        t_np = bench("numpy", kernels._pairwise_overlap_depths_np,
                     (mins, maxs), repeats=50)
        t_nb = bench("numba", kernels._pairwise_overlap_depths_nb,
                     (mins, maxs), repeats=50)
        print(f"  speedup    {t_np / t_nb:10.1f}x")

    for n in (10, 1000):
        mins, maxs = make_boxes(n, rng)
        p = np.array([5.0, 5.0, 5.0])
        print(f"point_clear_of_boxes, {n} boxes:")
        t_np = bench("numpy", kernels._point_clear_of_boxes_np,
                     (p, mins, maxs, 1e-3), repeats=500)
        t_nb = bench("numba", kernels._point_clear_of_boxes_nb,
                     (p, mins, maxs, 1e-3), repeats=500)
        print(f"  speedup    {t_np / t_nb:10.1f}x")


if __name__ == "__main__":
    main()
