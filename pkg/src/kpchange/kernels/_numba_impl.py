"""Numba backend: jitted kd-tree traversals and pooling loops.

Matches the numpy backend semantics exactly — neighbor ordering is
(squared distance, index) lexicographic, radius membership is a closed
ball — with identical float arithmetic per point so ties agree bitwise.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_STACK = 128  # tree depth bound; median splits keep depth ~log2(n/leaf)


@njit(cache=True, inline="always")
def _worse(d1, i1, d2, i2):
    """Lexicographic (distance, index) comparison: is entry 1 worse?"""
    return d1 > d2 or (d1 == d2 and i1 > i2)


@njit(cache=True)
def _heap_push(heap_d, heap_i, size, d, i):
    j = size
    heap_d[j] = d
    heap_i[j] = i
    while j > 0:
        parent = (j - 1) // 2
        if _worse(d, i, heap_d[parent], heap_i[parent]):
            heap_d[j] = heap_d[parent]
            heap_i[j] = heap_i[parent]
            heap_d[parent] = d
            heap_i[parent] = i
            j = parent
        else:
            break


@njit(cache=True)
def _heap_replace_top(heap_d, heap_i, size, d, i):
    heap_d[0] = d
    heap_i[0] = i
    j = 0
    while True:
        l = 2 * j + 1
        if l >= size:
            break
        r = l + 1
        big = l
        if r < size and _worse(heap_d[r], heap_i[r], heap_d[l], heap_i[l]):
            big = r
        if _worse(heap_d[big], heap_i[big], heap_d[j], heap_i[j]):
            td, ti = heap_d[j], heap_i[j]
            heap_d[j] = heap_d[big]
            heap_i[j] = heap_i[big]
            heap_d[big] = td
            heap_i[big] = ti
            j = big
        else:
            break


@njit(cache=True)
def _knn_kernel(pts, perm, axis, split, left, right, start, end, queries, k, out_i, out_d):
    m = queries.shape[0]
    stack_n = np.empty(_STACK, np.int64)
    stack_b = np.empty(_STACK, np.float64)
    heap_d = np.empty(k, np.float64)
    heap_i = np.empty(k, np.int64)
    for qi in range(m):
        qx = queries[qi, 0]
        qy = queries[qi, 1]
        qz = queries[qi, 2]
        size = 0
        stack_n[0] = 0
        stack_b[0] = 0.0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack_n[sp]
            bound = stack_b[sp]
            if size == k and bound > heap_d[0]:
                continue
            ax = axis[node]
            if ax == -1:
                for t in range(start[node], end[node]):
                    p = perm[t]
                    dx = pts[p, 0] - qx
                    dy = pts[p, 1] - qy
                    dz = pts[p, 2] - qz
                    d = dx * dx + dy * dy
                    d += dz * dz
                    if size < k:
                        _heap_push(heap_d, heap_i, size, d, p)
                        size += 1
                    elif _worse(heap_d[0], heap_i[0], d, p):
                        _heap_replace_top(heap_d, heap_i, size, d, p)
                continue
            if ax == 0:
                delta = qx - split[node]
            elif ax == 1:
                delta = qy - split[node]
            else:
                delta = qz - split[node]
            if delta <= 0.0:
                near = left[node]
                far = right[node]
            else:
                near = right[node]
                far = left[node]
            fb = delta * delta
            if fb < bound:
                fb = bound
            stack_n[sp] = far
            stack_b[sp] = fb
            sp += 1
            stack_n[sp] = near
            stack_b[sp] = bound
            sp += 1
        # drain the max-heap into ascending (distance, index) order
        for pos in range(size - 1, -1, -1):
            out_d[qi, pos] = heap_d[0]
            out_i[qi, pos] = heap_i[0]
            size -= 1
            _heap_replace_top(heap_d, heap_i, size, heap_d[size], heap_i[size])
    return out_i, out_d


@njit(cache=True)
def _radius_kernel(pts, perm, axis, split, left, right, start, end,
                   queries, r2, cylinder, counts, flat, offsets, fill):
    m = queries.shape[0]
    stack_n = np.empty(_STACK, np.int64)
    for qi in range(m):
        qx = queries[qi, 0]
        qy = queries[qi, 1]
        qz = queries[qi, 2]
        c = 0
        pos = offsets[qi] if fill else 0
        stack_n[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack_n[sp]
            ax = axis[node]
            if ax == -1:
                for t in range(start[node], end[node]):
                    p = perm[t]
                    dx = pts[p, 0] - qx
                    dy = pts[p, 1] - qy
                    d = dx * dx + dy * dy
                    if not cylinder:
                        dz = pts[p, 2] - qz
                        d += dz * dz
                    if d <= r2:
                        if fill:
                            flat[pos] = p
                            pos += 1
                        c += 1
                continue
            if ax == 0:
                delta = qx - split[node]
            elif ax == 1:
                delta = qy - split[node]
            else:
                delta = qz - split[node]
            if cylinder and ax == 2:
                # z never contributes to cylinder distance: visit both sides
                stack_n[sp] = left[node]
                sp += 1
                stack_n[sp] = right[node]
                sp += 1
                continue
            if delta <= 0.0:
                near = left[node]
                far = right[node]
            else:
                near = right[node]
                far = left[node]
            stack_n[sp] = near
            sp += 1
            if delta * delta <= r2:
                stack_n[sp] = far
                sp += 1
        counts[qi] = c


@njit(cache=True)
def _pool_kernel(feats, neigh, infl, out):
    n_q, h = neigh.shape
    k = infl.shape[2]
    c = feats.shape[1]
    for q in range(n_q):
        for j in range(h):
            n = neigh[q, j]
            if n < 0:
                continue
            for kk in range(k):
                a = infl[q, j, kk]
                if a != 0.0:
                    base = kk * c
                    for cc in range(c):
                        out[q, base + cc] += a * feats[n, cc]


@njit(cache=True)
def _pool_backward_kernel(g_pooled, neigh, infl, g_feats):
    n_q, h = neigh.shape
    k = infl.shape[2]
    c = g_feats.shape[1]
    for q in range(n_q):
        for j in range(h):
            n = neigh[q, j]
            if n < 0:
                continue
            for kk in range(k):
                a = infl[q, j, kk]
                if a != 0.0:
                    base = kk * c
                    for cc in range(c):
                        g_feats[n, cc] += a * g_pooled[q, base + cc]


def knn(tree, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    m = queries.shape[0]
    out_i = np.empty((m, k), dtype=np.int64)
    out_d = np.empty((m, k), dtype=np.float64)
    _knn_kernel(tree.pts, tree.perm, tree.axis, tree.split, tree.left,
                tree.right, tree.start, tree.end, queries, k, out_i, out_d)
    return out_i, out_d


def radius_counts(tree, queries: np.ndarray, r: float, cylinder: bool) -> np.ndarray:
    m = queries.shape[0]
    counts = np.empty(m, dtype=np.int64)
    dummy = np.empty(0, dtype=np.int64)
    _radius_kernel(tree.pts, tree.perm, tree.axis, tree.split, tree.left,
                   tree.right, tree.start, tree.end, queries, r * r, cylinder,
                   counts, dummy, dummy, False)
    return counts


def radius_lists(tree, queries: np.ndarray, r: float, cylinder: bool) -> tuple[np.ndarray, np.ndarray]:
    m = queries.shape[0]
    counts = np.empty(m, dtype=np.int64)
    dummy = np.empty(0, dtype=np.int64)
    _radius_kernel(tree.pts, tree.perm, tree.axis, tree.split, tree.left,
                   tree.right, tree.start, tree.end, queries, r * r, cylinder,
                   counts, dummy, dummy, False)
    offsets = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    flat = np.empty(offsets[-1], dtype=np.int64)
    _radius_kernel(tree.pts, tree.perm, tree.axis, tree.split, tree.left,
                   tree.right, tree.start, tree.end, queries, r * r, cylinder,
                   counts, flat, offsets, True)
    # traversal order is tree order; contract is ascending index per query
    qid = np.repeat(np.arange(m, dtype=np.int64), counts)
    order = np.lexsort((flat, qid))
    return flat[order], offsets


def kpconv_pool(feats: np.ndarray, neigh: np.ndarray, infl: np.ndarray) -> np.ndarray:
    n_q = neigh.shape[0]
    k = infl.shape[2]
    c = feats.shape[1]
    out = np.zeros((n_q, k * c), dtype=feats.dtype)
    _pool_kernel(feats, neigh, infl, out)
    return out


def kpconv_pool_backward(g_pooled: np.ndarray, neigh: np.ndarray, infl: np.ndarray, n_support: int) -> np.ndarray:
    k = infl.shape[2]
    c = g_pooled.shape[1] // k
    g_feats = np.zeros((n_support, c), dtype=g_pooled.dtype)
    _pool_backward_kernel(g_pooled, neigh, infl, g_feats)
    return g_feats
