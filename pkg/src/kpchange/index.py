"""Spatial index over one point cloud: kNN and radius queries.

Thin contract layer over the kernel backends. All queries are
deterministic: neighbor ties at equal distance resolve to the lower point
index, radius membership is a closed ball (<= r), and the cylinder variant
extends infinitely along z.
"""

from __future__ import annotations

import numpy as np

from kpchange import kernels


class SpatialIndex:
    """Immutable kd-tree over an (n, 3) coordinate array."""

    def __init__(self, points: np.ndarray, leaf_size: int = 16):
        self._tree = kernels.build_tree(points, leaf_size=leaf_size)
        self.n_points = self._tree.pts.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self._tree.pts

    def knn(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """k nearest points per query row, ordered by (distance, index).

        Returns ``(indices, distances)`` of shape (m, k); accepts a single
        (3,) query and then returns (k,) arrays.
        """
        q = np.asarray(queries, dtype=np.float64)
        single = q.ndim == 1
        if single:
            q = q.reshape(1, 3)
        idx, d2 = kernels.knn(self._tree, q, k)
        dist = np.sqrt(d2)
        if single:
            return idx[0], dist[0]
        return idx, dist

    def radius_sphere(self, center: np.ndarray, r: float) -> np.ndarray:
        """Indices of points with euclidean distance <= r, ascending."""
        flat, _ = kernels.radius_lists(self._tree, np.asarray(center, dtype=np.float64).reshape(1, 3), r)
        return flat

    def radius_cylinder(self, center: np.ndarray, r: float) -> np.ndarray:
        """Indices with horizontal distance <= r, any z, ascending."""
        flat, _ = kernels.radius_lists(self._tree, np.asarray(center, dtype=np.float64).reshape(1, 3), r, cylinder=True)
        return flat

    def radius_lists(self, queries: np.ndarray, r: float, cylinder: bool = False) -> tuple[np.ndarray, np.ndarray]:
        return kernels.radius_lists(self._tree, queries, r, cylinder=cylinder)

    def count_sphere(self, queries: np.ndarray, r: float) -> np.ndarray:
        return kernels.radius_counts(self._tree, queries, r, cylinder=False)

    def count_cylinder(self, queries: np.ndarray, r: float) -> np.ndarray:
        return kernels.radius_counts(self._tree, queries, r, cylinder=True)
