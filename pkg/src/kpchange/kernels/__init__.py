"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is picked once at import time: numba when it is importable and
the environment variable ``KPCHANGE_NUMBA`` is not set to ``0`` (or
``false``/``no``/``off``). Both backends return identical results up to
floating-point summation order; ``benchmarks/bench_kernels.py`` compares
their throughput.

All spatial queries run against a balanced kd-tree stored as flat arrays
(:class:`TreeArrays`) so the same structure feeds both backends.
"""

from __future__ import annotations

import os
from typing import NamedTuple

import numpy as np

NUMBA_ENV = "KPCHANGE_NUMBA"

_want_numba = os.environ.get(NUMBA_ENV, "1").strip().lower() not in ("0", "false", "no", "off")
try:
    import numba  # noqa: F401

    _have_numba = True
except ImportError:
    _have_numba = False

USE_NUMBA = _want_numba and _have_numba

from kpchange.kernels import _numpy_impl

if USE_NUMBA:
    from kpchange.kernels import _numba_impl as _impl
else:
    _impl = _numpy_impl


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


class TreeArrays(NamedTuple):
    """Balanced kd-tree in flat-array form (immutable after build).

    Leaves are marked by ``axis == -1`` and own the slice
    ``perm[start:end]``. Internal nodes split on ``axis`` at ``split``:
    the left child holds coordinates <= split, the right child >= split.
    """

    pts: np.ndarray      # (n, 3) float64, C-contiguous
    perm: np.ndarray     # (n,) int64, permutation into pts
    axis: np.ndarray     # (m,) int64, -1 for leaves
    split: np.ndarray    # (m,) float64
    left: np.ndarray     # (m,) int64
    right: np.ndarray    # (m,) int64
    start: np.ndarray    # (m,) int64
    end: np.ndarray      # (m,) int64


def build_tree(points: np.ndarray, leaf_size: int = 16) -> TreeArrays:
    """Median-split kd-tree over ``points``; deterministic for fixed input."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got {pts.shape}")
    n = pts.shape[0]
    if n == 0:
        raise ValueError("cannot build a spatial index over an empty cloud")
    perm = np.arange(n, dtype=np.int64)
    axis_l: list[int] = []
    split_l: list[float] = []
    left_l: list[int] = []
    right_l: list[int] = []
    start_l: list[int] = []
    end_l: list[int] = []

    def rec(start: int, end: int) -> int:
        nid = len(axis_l)
        axis_l.append(-1)
        split_l.append(0.0)
        left_l.append(-1)
        right_l.append(-1)
        start_l.append(start)
        end_l.append(end)
        if end - start <= leaf_size:
            return nid
        seg = perm[start:end]
        coords = pts[seg]
        ax = int(np.argmax(coords.max(axis=0) - coords.min(axis=0)))
        mid = (end - start) // 2
        order = np.argpartition(coords[:, ax], mid)
        perm[start:end] = seg[order]
        axis_l[nid] = ax
        split_l[nid] = pts[perm[start + mid], ax]
        left_l[nid] = rec(start, start + mid)
        right_l[nid] = rec(start + mid, end)
        return nid

    rec(0, n)
    return TreeArrays(
        pts=pts,
        perm=perm,
        axis=np.asarray(axis_l, dtype=np.int64),
        split=np.asarray(split_l, dtype=np.float64),
        left=np.asarray(left_l, dtype=np.int64),
        right=np.asarray(right_l, dtype=np.int64),
        start=np.asarray(start_l, dtype=np.int64),
        end=np.asarray(end_l, dtype=np.int64),
    )


def _as_queries(queries: np.ndarray) -> np.ndarray:
    q = np.ascontiguousarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != 3:
        raise ValueError(f"expected (m, 3) queries, got {q.shape}")
    return q


def knn(tree: TreeArrays, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """For each query: the k nearest points ordered by (distance, index).

    Returns ``(idx, d2)`` with squared distances; ties at equal distance
    resolve to the lower point index in both backends.
    """
    q = _as_queries(queries)
    n = tree.pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    return _impl.knn(tree, q, int(k))


def radius_counts(tree: TreeArrays, queries: np.ndarray, r: float, cylinder: bool = False) -> np.ndarray:
    """Number of points within distance <= r of each query (closed ball).

    With ``cylinder=True`` the distance ignores z (infinite vertical extent).
    """
    q = _as_queries(queries)
    if not r > 0.0:
        raise ValueError(f"radius must be positive, got {r}")
    return _impl.radius_counts(tree, q, float(r), bool(cylinder))


def radius_lists(tree: TreeArrays, queries: np.ndarray, r: float, cylinder: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Indices within distance <= r per query, ascending, as (flat, offsets)."""
    q = _as_queries(queries)
    if not r > 0.0:
        raise ValueError(f"radius must be positive, got {r}")
    return _impl.radius_lists(tree, q, float(r), bool(cylinder))


def kpconv_pool(feats: np.ndarray, neigh: np.ndarray, infl: np.ndarray) -> np.ndarray:
    """Influence-weighted neighborhood pooling.

    ``out[q, k*C + c] = sum_h infl[q, h, k] * feats[neigh[q, h], c]`` with
    ``neigh == -1`` marking padded (absent) neighbors.
    """
    return _impl.kpconv_pool(feats, neigh, infl)


def kpconv_pool_backward(g_pooled: np.ndarray, neigh: np.ndarray, infl: np.ndarray, n_support: int) -> np.ndarray:
    """Adjoint of :func:`kpconv_pool` with respect to the support features."""
    return _impl.kpconv_pool_backward(g_pooled, neigh, infl, int(n_support))
