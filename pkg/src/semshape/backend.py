"""Hot numeric kernels: nearest-neighbor passes and farthest-point sampling.

Two interchangeable implementations live here:

* numba ``@njit`` loops (default when numba imports cleanly), and
* a pure-numpy fallback using chunked broadcasting.

The active one is picked at import time from the ``SEMSHAPE_BACKEND``
environment variable: ``"numba"``, ``"numpy"`` or ``"auto"`` (default).
Both paths use the same arithmetic, squared coordinate differences summed
x then y then z with ties resolved toward the lowest index, so the two
implementations return bit-identical results and swapping the backend
never changes any downstream number. ``python -m semshape.bench`` times
one against the other and checks that equality.
"""

from __future__ import annotations

import os

import numpy as np

# =========================================================================
# Optional numba import
# =========================================================================

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        """Stand-in decorator so the module still imports without numba."""

        def wrapper(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrapper


# =========================================================================
# numba kernels
# =========================================================================


@njit(cache=True)
def _nn_one_way_numba(a, b):
    """Nearest row of ``b`` for every row of ``a`` (squared distances)."""
    n_a = a.shape[0]
    n_b = b.shape[0]
    idx = np.empty(n_a, dtype=np.int64)
    sqd = np.empty(n_a, dtype=np.float64)
    for i in range(n_a):
        best = np.inf
        best_j = 0
        for j in range(n_b):
            d0 = a[i, 0] - b[j, 0]
            d1 = a[i, 1] - b[j, 1]
            d2 = a[i, 2] - b[j, 2]
            d = d0 * d0 + d1 * d1 + d2 * d2
            if d < best:
                best = d
                best_j = j
        idx[i] = best_j
        sqd[i] = best
    return idx, sqd


@njit(cache=True)
def _nn_both_ways_numba(a, b):
    """One O(len(a)*len(b)) pass giving nearest neighbors in both directions."""
    n_a = a.shape[0]
    n_b = b.shape[0]
    idx_ab = np.empty(n_a, dtype=np.int64)
    sqd_ab = np.empty(n_a, dtype=np.float64)
    idx_ba = np.zeros(n_b, dtype=np.int64)
    sqd_ba = np.full(n_b, np.inf, dtype=np.float64)
    for i in range(n_a):
        best = np.inf
        best_j = 0
        for j in range(n_b):
            d0 = a[i, 0] - b[j, 0]
            d1 = a[i, 1] - b[j, 1]
            d2 = a[i, 2] - b[j, 2]
            d = d0 * d0 + d1 * d1 + d2 * d2
            if d < best:
                best = d
                best_j = j
            if d < sqd_ba[j]:
                sqd_ba[j] = d
                idx_ba[j] = i
        idx_ab[i] = best_j
        sqd_ab[i] = best
    return idx_ab, sqd_ab, idx_ba, sqd_ba


@njit(cache=True)
def _fps_numba(points, count, start):
    """Greedy farthest-point sampling; ties go to the lowest index."""
    n = points.shape[0]
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    min_sqd = np.empty(n, dtype=np.float64)
    for i in range(n):
        d0 = points[i, 0] - points[start, 0]
        d1 = points[i, 1] - points[start, 1]
        d2 = points[i, 2] - points[start, 2]
        min_sqd[i] = d0 * d0 + d1 * d1 + d2 * d2
    for k in range(1, count):
        best = -1.0
        best_i = 0
        for i in range(n):
            if min_sqd[i] > best:
                best = min_sqd[i]
                best_i = i
        chosen[k] = best_i
        for i in range(n):
            d0 = points[i, 0] - points[best_i, 0]
            d1 = points[i, 1] - points[best_i, 1]
            d2 = points[i, 2] - points[best_i, 2]
            d = d0 * d0 + d1 * d1 + d2 * d2
            if d < min_sqd[i]:
                min_sqd[i] = d
    return chosen


# =========================================================================
# pure-numpy fallbacks
# =========================================================================

# chunk rows so the (chunk, N, 3) difference tensor stays around 24 MB
_CHUNK_BUDGET = 1_000_000


def _chunk_rows(n_other: int) -> int:
    return max(1, _CHUNK_BUDGET // max(n_other, 1))


def _sq_dists(a_rows, b):
    """(len(a_rows), len(b)) squared distances, accumulated coordinate by
    coordinate so every element matches the scalar loop bit for bit."""
    dx = a_rows[:, 0, None] - b[:, 0]
    dy = a_rows[:, 1, None] - b[:, 1]
    dz = a_rows[:, 2, None] - b[:, 2]
    return dx * dx + dy * dy + dz * dz


def _nn_one_way_numpy(a, b):
    n_a = a.shape[0]
    idx = np.empty(n_a, dtype=np.int64)
    sqd = np.empty(n_a, dtype=np.float64)
    step = _chunk_rows(b.shape[0])
    for lo in range(0, n_a, step):
        hi = min(lo + step, n_a)
        d = _sq_dists(a[lo:hi], b)
        idx[lo:hi] = np.argmin(d, axis=1)
        sqd[lo:hi] = d[np.arange(hi - lo), idx[lo:hi]]
    return idx, sqd


def _nn_both_ways_numpy(a, b):
    n_a, n_b = a.shape[0], b.shape[0]
    idx_ab = np.empty(n_a, dtype=np.int64)
    sqd_ab = np.empty(n_a, dtype=np.float64)
    idx_ba = np.zeros(n_b, dtype=np.int64)
    sqd_ba = np.full(n_b, np.inf)
    step = _chunk_rows(n_b)
    for lo in range(0, n_a, step):
        hi = min(lo + step, n_a)
        d = _sq_dists(a[lo:hi], b)
        idx_ab[lo:hi] = np.argmin(d, axis=1)
        sqd_ab[lo:hi] = d[np.arange(hi - lo), idx_ab[lo:hi]]
        col_arg = np.argmin(d, axis=0)
        col_min = d[col_arg, np.arange(n_b)]
        better = col_min < sqd_ba  # strict: earlier chunks win ties
        sqd_ba[better] = col_min[better]
        idx_ba[better] = col_arg[better] + lo
    return idx_ab, sqd_ab, idx_ba, sqd_ba


def _fps_numpy(points, count, start):
    n = points.shape[0]
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    min_sqd = _sq_dists(points, points[start, None]).ravel()
    for k in range(1, count):
        best_i = int(np.argmax(min_sqd))  # first occurrence = lowest index
        chosen[k] = best_i
        d = _sq_dists(points, points[best_i, None]).ravel()
        np.minimum(min_sqd, d, out=min_sqd)
    return chosen


# =========================================================================
# dispatch
# =========================================================================

IMPLEMENTATIONS = {
    "numpy": {
        "nn_one_way": _nn_one_way_numpy,
        "nn_both_ways": _nn_both_ways_numpy,
        "fps": _fps_numpy,
    },
}
if NUMBA_AVAILABLE:
    IMPLEMENTATIONS["numba"] = {
        "nn_one_way": _nn_one_way_numba,
        "nn_both_ways": _nn_both_ways_numba,
        "fps": _fps_numba,
    }


def _select_backend() -> str:
    requested = os.environ.get("SEMSHAPE_BACKEND", "auto").strip().lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"SEMSHAPE_BACKEND must be 'auto', 'numba' or 'numpy', got {requested!r}"
        )
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not NUMBA_AVAILABLE:
            raise ImportError("SEMSHAPE_BACKEND=numba but numba is not importable")
        return "numba"
    return "numba" if NUMBA_AVAILABLE else "numpy"


BACKEND = _select_backend()
_active = IMPLEMENTATIONS[BACKEND]


def _prep(arr) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != 3:
        raise ValueError(f"expected (N, 3) array, got {out.shape}")
    return out


def nearest_neighbors(a, b):
    """Index into ``b`` of the nearest point per row of ``a``, plus squared
    distances. Ties break toward the lowest index."""
    return _active["nn_one_way"](_prep(a), _prep(b))


def nearest_both(a, b):
    """Nearest-neighbor indices and squared distances in both directions."""
    return _active["nn_both_ways"](_prep(a), _prep(b))


def farthest_point_indices(points, count: int, start: int):
    """Indices of a greedy farthest-point subsample beginning at ``start``."""
    pts = _prep(points)
    if not 1 <= count <= pts.shape[0]:
        raise ValueError(f"count must be in [1, {pts.shape[0]}], got {count}")
    if not 0 <= start < pts.shape[0]:
        raise ValueError(f"start index {start} out of range")
    return _active["fps"](pts, int(count), int(start))
