"""Pure-numpy backend: vectorized brute-force scans and einsum pooling.

Correctness reference for the numba backend. Queries scan all points in
chunks, so memory stays bounded while throughput remains acceptable for
small clouds; large clouds should run on the numba backend.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 256


def _dist2_chunk(pts: np.ndarray, q: np.ndarray, cylinder: bool) -> np.ndarray:
    if cylinder:
        diff = pts[None, :, :2] - q[:, None, :2]
    else:
        diff = pts[None, :, :] - q[:, None, :]
    # sequential-axis sum: bitwise identical to the numba kernel's dx*dx+dy*dy+dz*dz
    return (diff * diff).sum(axis=2)


def knn(tree, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    pts = tree.pts
    m = queries.shape[0]
    idx = np.empty((m, k), dtype=np.int64)
    d2 = np.empty((m, k), dtype=np.float64)
    for lo in range(0, m, _CHUNK):
        q = queries[lo:lo + _CHUNK]
        dist = _dist2_chunk(pts, q, cylinder=False)
        # stable sort on distance keeps ties in ascending index order
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        idx[lo:lo + q.shape[0]] = order
        d2[lo:lo + q.shape[0]] = np.take_along_axis(dist, order, axis=1)
    return idx, d2


def radius_counts(tree, queries: np.ndarray, r: float, cylinder: bool) -> np.ndarray:
    pts = tree.pts
    r2 = r * r
    m = queries.shape[0]
    counts = np.empty(m, dtype=np.int64)
    for lo in range(0, m, _CHUNK):
        q = queries[lo:lo + _CHUNK]
        dist = _dist2_chunk(pts, q, cylinder)
        counts[lo:lo + q.shape[0]] = (dist <= r2).sum(axis=1)
    return counts


def radius_lists(tree, queries: np.ndarray, r: float, cylinder: bool) -> tuple[np.ndarray, np.ndarray]:
    pts = tree.pts
    r2 = r * r
    m = queries.shape[0]
    chunks = []
    counts = np.empty(m, dtype=np.int64)
    for lo in range(0, m, _CHUNK):
        q = queries[lo:lo + _CHUNK]
        dist = _dist2_chunk(pts, q, cylinder)
        mask = dist <= r2
        counts[lo:lo + q.shape[0]] = mask.sum(axis=1)
        rows, cols = np.nonzero(mask)  # row-major: per query, ascending index
        chunks.append(cols.astype(np.int64))
    offsets = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    flat = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    return flat, offsets


def kpconv_pool(feats: np.ndarray, neigh: np.ndarray, infl: np.ndarray) -> np.ndarray:
    n_q, h = neigh.shape
    k = infl.shape[2]
    c = feats.shape[1]
    padded = np.concatenate([feats, np.zeros((1, c), dtype=feats.dtype)], axis=0)
    gathered = padded[np.where(neigh >= 0, neigh, feats.shape[0])]  # (n_q, h, c)
    pooled = np.einsum("qhk,qhc->qkc", infl, gathered)
    return np.ascontiguousarray(pooled.reshape(n_q, k * c))


def kpconv_pool_backward(g_pooled: np.ndarray, neigh: np.ndarray, infl: np.ndarray, n_support: int) -> np.ndarray:
    n_q, h = neigh.shape
    k = infl.shape[2]
    c = g_pooled.shape[1] // k
    g3 = g_pooled.reshape(n_q, k, c)
    g_gathered = np.einsum("qhk,qkc->qhc", infl, g3)
    out = np.zeros((n_support + 1, c), dtype=g_pooled.dtype)
    np.add.at(out, np.where(neigh >= 0, neigh, n_support), g_gathered)
    return out[:-1]
