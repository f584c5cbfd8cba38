"""Geometry kernels for collision checking and overlap measurement.

These are the hot inner loops of the placement sampler and the motion
planner. Each kernel has a pure-numpy implementation and a numba-compiled
one; set ``ANOMALYKIT_DISABLE_NUMBA=1`` to force the numpy path (the
default is numba whenever it imports). ``benchmarks/bench_kernels.py``
compares the two.
"""

import os

import numpy as np

_DISABLE = os.environ.get("ANOMALYKIT_DISABLE_NUMBA", "") == "1"

try:
    if _DISABLE:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return deco


BACKEND = "numba" if HAVE_NUMBA else "numpy"


def _segment_hits_any_box_np(p0, p1, mins, maxs, margin):
    """Slab test of one segment against n inflated boxes, vectorized."""
    if mins.shape[0] == 0:
        return False
    lo = mins - margin
    hi = maxs + margin
    d = p1 - p0
    tmin = 0.0
    tmax = 1.0
    # Per-axis entry/exit parameters for every box at once.
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(d != 0.0, 1.0 / d, np.inf)
    t1 = (lo - p0) * inv
    t2 = (hi - p0) * inv
    # Axes parallel to the segment: hit only if p0 lies inside the slab.
    par_ok = (p0 >= lo) & (p0 <= hi)
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    near = np.where(np.isfinite(near), near, np.where(par_ok, -np.inf, np.inf))
    far = np.where(np.isfinite(far), far, np.where(par_ok, np.inf, -np.inf))
    enter = np.maximum(near.max(axis=1), tmin)
    leave = np.minimum(far.min(axis=1), tmax)
    return bool(np.any(enter <= leave))


@njit(cache=True)
def _segment_hits_any_box_nb(p0, p1, mins, maxs, margin):  # pragma: no cover
    n = mins.shape[0]
    for b in range(n):
        tmin = 0.0
        tmax = 1.0
        hit = True
        for ax in range(3):
            lo = mins[b, ax] - margin
            hi = maxs[b, ax] + margin
            d = p1[ax] - p0[ax]
            if d == 0.0:
                if p0[ax] < lo or p0[ax] > hi:
                    hit = False
                    break
            else:
                t1 = (lo - p0[ax]) / d
                t2 = (hi - p0[ax]) / d
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
                if tmin > tmax:
                    hit = False
                    break
        if hit:
            return True
    return False


def _pairwise_overlap_depths_np(mins, maxs):
    """n*n matrix of AABB interpenetration depths (0 where disjoint)."""
    n = mins.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    lo = np.maximum(mins[:, None, :], mins[None, :, :])
    hi = np.minimum(maxs[:, None, :], maxs[None, :, :])
    depth = np.min(hi - lo, axis=2)
    np.maximum(depth, 0.0, out=depth)
    np.fill_diagonal(depth, 0.0)
    return depth


@njit(cache=True)
def _pairwise_overlap_depths_nb(mins, maxs):  # pragma: no cover
    n = mins.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            depth = 1e30
            for ax in range(3):
                lo = max(mins[i, ax], mins[j, ax])
                hi = min(maxs[i, ax], maxs[j, ax])
                d = hi - lo
                if d < depth:
                    depth = d
            if depth > 0.0:
                out[i, j] = depth
                out[j, i] = depth
    return out


def _point_clear_of_boxes_np(p, mins, maxs, margin):
    if mins.shape[0] == 0:
        return True
    inside = np.all((p >= mins - margin) & (p <= maxs + margin), axis=1)
    return not bool(np.any(inside))


@njit(cache=True)
def _point_clear_of_boxes_nb(p, mins, maxs, margin):  # pragma: no cover
    n = mins.shape[0]
    for b in range(n):
        inside = True
        for ax in range(3):
            if p[ax] < mins[b, ax] - margin or p[ax] > maxs[b, ax] + margin:
                inside = False
                break
        if inside:
            return False
    return True


if HAVE_NUMBA:
    _segment_impl = _segment_hits_any_box_nb
    _pairwise_impl = _pairwise_overlap_depths_nb
    _point_impl = _point_clear_of_boxes_nb
else:
    _segment_impl = _segment_hits_any_box_np
    _pairwise_impl = _pairwise_overlap_depths_np
    _point_impl = _point_clear_of_boxes_np


def segment_hits_any_box(p0, p1, mins, maxs, margin=0.0):
    """True if segment p0-p1 intersects any AABB inflated by margin."""
    p0 = np.ascontiguousarray(p0, dtype=np.float64)
    p1 = np.ascontiguousarray(p1, dtype=np.float64)
    mins = np.ascontiguousarray(mins, dtype=np.float64).reshape(-1, 3)
    maxs = np.ascontiguousarray(maxs, dtype=np.float64).reshape(-1, 3)
    if mins.shape[0] == 0:
        return False
    return bool(_segment_impl(p0, p1, mins, maxs, float(margin)))


def pairwise_overlap_depths(mins, maxs):
    """Symmetric matrix of interpenetration depths between all box pairs."""
    mins = np.ascontiguousarray(mins, dtype=np.float64).reshape(-1, 3)
    maxs = np.ascontiguousarray(maxs, dtype=np.float64).reshape(-1, 3)
    return np.asarray(_pairwise_impl(mins, maxs))


def point_clear_of_boxes(p, mins, maxs, margin=0.0):
    """True if the point is outside every AABB inflated by margin."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    mins = np.ascontiguousarray(mins, dtype=np.float64).reshape(-1, 3)
    maxs = np.ascontiguousarray(maxs, dtype=np.float64).reshape(-1, 3)
    if mins.shape[0] == 0:
        return True
    return bool(_point_impl(p, mins, maxs, float(margin)))
