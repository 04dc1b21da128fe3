"""Point cloud container, voxel subsampling, and cylinder pair extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kpchange.index import SpatialIndex
from kpchange.labels import N_CLASSES


class EmptyCylinderError(ValueError):
    """Raised when a cylinder crop leaves one epoch without points."""


@dataclass
class PointCloud:
    """One epoch's points with optional per-point features and labels."""

    points: np.ndarray
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    epoch_tag: str = "PC1"

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (n, 3), got {self.points.shape}")
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        n = self.points.shape[0]
        if self.features is not None:
            self.features = np.ascontiguousarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or self.features.shape[0] != n:
                raise ValueError(f"features must have {n} rows, got {self.features.shape}")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError(f"labels must have shape ({n},), got {self.labels.shape}")
            if n and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
                raise ValueError(f"labels must lie in [0, {N_CLASSES})")
        if self.epoch_tag not in ("PC1", "PC2"):
            raise ValueError(f"epoch_tag must be PC1 or PC2, got {self.epoch_tag!r}")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def select(self, mask_or_idx: np.ndarray) -> "PointCloud":
        """New cloud restricted to a boolean mask or index array."""
        return PointCloud(
            points=self.points[mask_or_idx],
            features=None if self.features is None else self.features[mask_or_idx],
            labels=None if self.labels is None else self.labels[mask_or_idx],
            epoch_tag=self.epoch_tag,
        )


@dataclass
class CylinderPair:
    """Co-located vertical-cylinder crops of both epochs."""

    sub1: PointCloud
    sub2: PointCloud
    center_xy: tuple[float, float]
    radius: float


def build_index(cloud: PointCloud) -> SpatialIndex:
    if cloud.n == 0:
        raise ValueError("cannot index an empty cloud")
    return SpatialIndex(cloud.points)


def grid_subsample(cloud: PointCloud, dl: float, origin: np.ndarray | None = None) -> PointCloud:
    """One point per occupied voxel of side dl, at the voxel barycenter.

    Features are averaged; labels take the majority vote with ties going to
    the lowest class id. The grid is anchored at the cloud's minimum corner
    unless ``origin`` is given (pass it to keep a fixed grid across calls).
    """
    if not dl > 0:
        raise ValueError(f"dl must be positive, got {dl}")
    if cloud.n == 0:
        return cloud
    pts = cloud.points
    if origin is None:
        origin = pts.min(axis=0)
    origin = np.asarray(origin, dtype=np.float64)
    cells = np.floor((pts - origin) / dl).astype(np.int64)
    cells -= cells.min(axis=0)
    dims = cells.max(axis=0) + 1
    keys = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]
    uniq, inv = np.unique(keys, return_inverse=True)
    n_vox = uniq.shape[0]
    counts = np.bincount(inv, minlength=n_vox).astype(np.float64)

    sums = np.zeros((n_vox, 3), dtype=np.float64)
    np.add.at(sums, inv, pts)
    out_pts = sums / counts[:, None]

    out_feats = None
    if cloud.features is not None:
        fsum = np.zeros((n_vox, cloud.features.shape[1]), dtype=np.float64)
        np.add.at(fsum, inv, cloud.features)
        out_feats = fsum / counts[:, None]

    out_labels = None
    if cloud.labels is not None:
        votes = np.zeros((n_vox, N_CLASSES), dtype=np.int64)
        np.add.at(votes, (inv, cloud.labels), 1)
        out_labels = np.argmax(votes, axis=1)  # first max = lowest class id

    return PointCloud(points=out_pts, features=out_feats, labels=out_labels, epoch_tag=cloud.epoch_tag)


def cylinder_mask(points: np.ndarray, center_xy, radius: float) -> np.ndarray:
    dx = points[:, 0] - center_xy[0]
    dy = points[:, 1] - center_xy[1]
    return dx * dx + dy * dy <= radius * radius


def extract_cylinder_pair(pc1: PointCloud, pc2: PointCloud, center_xy, radius: float) -> CylinderPair:
    """Crop both epochs to the same vertical cylinder; sub2 keeps labels."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    m1 = cylinder_mask(pc1.points, center_xy, radius)
    m2 = cylinder_mask(pc2.points, center_xy, radius)
    if not m1.any() or not m2.any():
        raise EmptyCylinderError(
            f"cylinder at {tuple(center_xy)} r={radius} leaves an epoch empty "
            f"({int(m1.sum())} / {int(m2.sum())} points)"
        )
    return CylinderPair(
        sub1=pc1.select(m1),
        sub2=pc2.select(m2),
        center_xy=(float(center_xy[0]), float(center_xy[1])),
        radius=float(radius),
    )
