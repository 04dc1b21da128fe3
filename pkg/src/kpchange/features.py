"""Hand-crafted per-point features for bi-temporal change analysis.

Ten channels per point, in fixed order: normal components (nx, ny, nz),
covariance shape descriptors (linearity, planarity, omnivariance), local
height statistics (z_range, z_rank), height above ground (nH), and the
bi-temporal stability percentage — the ratio of the other epoch's point
count in a sphere to its count in a vertical cylinder of the same radius.
Stability sits near 100 where nothing changed and drops toward 0 where the
local column emptied or filled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kpchange.cloud import PointCloud, build_index
from kpchange.index import SpatialIndex

FEATURE_NAMES = (
    "nx", "ny", "nz",
    "linearity", "planarity", "omnivariance",
    "z_range", "z_rank", "height_above_ground",
    "stability",
)

DEFAULT_K = 10
DEFAULT_STABILITY_RADIUS = 5.0
DEFAULT_DTM_CELL = 5.0


@dataclass
class EigenTriple:
    """Descending covariance eigenvalues with matching unit eigenvectors."""

    eigenvalues: np.ndarray   # (3,) descending, clamped at 0
    eigenvectors: np.ndarray  # (3, 3) columns, eigenvectors[:, i] for eigenvalues[i]
    degenerate: bool = False

    @property
    def ambiguous_normal(self) -> bool:
        """In-plane eigenvector direction is arbitrary when l2 == l3."""
        return bool(np.isclose(self.eigenvalues[1], self.eigenvalues[2]))


def covariance_eigen(neighbors: np.ndarray) -> EigenTriple:
    """Eigendecompose the 3x3 covariance of a neighborhood's coordinates."""
    pts = np.asarray(neighbors, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (k, 3) neighborhood, got {pts.shape}")
    if pts.shape[0] < 3:
        return EigenTriple(np.zeros(3), np.eye(3), degenerate=True)
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)  # ascending
    evals = np.clip(evals[::-1], 0.0, None)
    evecs = evecs[:, ::-1]
    return EigenTriple(evals, evecs, degenerate=bool(evals[0] <= 0.0))


def eigenfeatures(e: EigenTriple) -> tuple[float, float, float]:
    """(linearity, planarity, omnivariance) from the sorted eigenvalues."""
    l1, l2, l3 = e.eigenvalues
    if e.degenerate or l1 <= 0.0:
        return 0.0, 0.0, 0.0
    return (
        float((l1 - l2) / l1),
        float((l2 - l3) / l1),
        float(np.cbrt(l1 * l2 * l3)),
    )


def normal_vector(e: EigenTriple) -> np.ndarray:
    """Unit normal: the smallest-eigenvalue eigenvector, oriented upward.

    When nz == 0 the sign flips so the first nonzero component is positive;
    degenerate neighborhoods default to straight up.
    """
    if e.degenerate:
        return np.array([0.0, 0.0, 1.0])
    v = e.eigenvectors[:, 2].copy()
    if v[2] != 0.0:
        s = np.sign(v[2])
    elif v[0] != 0.0:
        s = np.sign(v[0])
    else:
        s = np.sign(v[1]) or 1.0
    return v * s


def height_features(z: float, index: int, neigh_z: np.ndarray, neigh_idx: np.ndarray) -> tuple[float, int]:
    """(z_range, z_rank) of one point within its neighborhood.

    Rank counts neighbors strictly below, with equal heights broken by
    point index so ranks stay a bijection under duplicate z values.
    """
    neigh_z = np.asarray(neigh_z, dtype=np.float64)
    neigh_idx = np.asarray(neigh_idx, dtype=np.int64)
    z_range = float(neigh_z.max() - neigh_z.min())
    below = (neigh_z < z) | ((neigh_z == z) & (neigh_idx < index))
    return z_range, int(below.sum())


@dataclass
class DtmGrid:
    """Ground-height raster: minimum z per cell, holes filled by nearest cell."""

    heights: np.ndarray        # (ny, nx)
    cell: float
    origin: tuple[float, float]

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Ground height under each (x, y); outside points clamp to the rim."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        ix = np.clip(((pts[:, 0] - self.origin[0]) // self.cell).astype(np.int64), 0, self.heights.shape[1] - 1)
        iy = np.clip(((pts[:, 1] - self.origin[1]) // self.cell).astype(np.int64), 0, self.heights.shape[0] - 1)
        return self.heights[iy, ix]


def build_dtm(cloud: PointCloud, cell: float = DEFAULT_DTM_CELL) -> DtmGrid:
    if not cell > 0:
        raise ValueError(f"cell must be positive, got {cell}")
    if cloud.n == 0:
        raise ValueError("cannot rasterize an empty cloud")
    pts = cloud.points
    x0, y0 = pts[:, 0].min(), pts[:, 1].min()
    nx = int((pts[:, 0].max() - x0) // cell) + 1
    ny = int((pts[:, 1].max() - y0) // cell) + 1
    ix = np.clip(((pts[:, 0] - x0) // cell).astype(np.int64), 0, nx - 1)
    iy = np.clip(((pts[:, 1] - y0) // cell).astype(np.int64), 0, ny - 1)
    heights = np.full((ny, nx), np.inf)
    np.minimum.at(heights, (iy, ix), pts[:, 2])

    filled = np.isfinite(heights)
    if not filled.all():
        fy, fx = np.nonzero(filled)          # row-major: deterministic tie order
        ey, ex = np.nonzero(~filled)
        d2 = (ey[:, None] - fy[None, :]) ** 2 + (ex[:, None] - fx[None, :]) ** 2
        nearest = np.argmin(d2, axis=1)      # first minimum wins ties
        heights[ey, ex] = heights[fy[nearest], fx[nearest]]
    return DtmGrid(heights=heights, cell=float(cell), origin=(float(x0), float(y0)))


def normalized_height(points: np.ndarray, dtm: DtmGrid) -> np.ndarray:
    """Height above the ground raster, clamped at 0 against sensor noise."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return np.maximum(0.0, pts[:, 2] - dtm.sample(pts))


def stability(points: np.ndarray, other_index: SpatialIndex, r: float = DEFAULT_STABILITY_RADIUS) -> np.ndarray:
    """Percentage of the other epoch's column occupancy preserved in 3D.

    100 * n_sphere / n_cylinder per query point, with an empty column
    giving 0 (nothing of the other epoch survives locally).
    """
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n3d = other_index.count_sphere(pts, r).astype(np.float64)
    n2d = other_index.count_cylinder(pts, r).astype(np.float64)
    out = np.zeros(pts.shape[0])
    np.divide(n3d, n2d, out=out, where=n2d > 0)
    return 100.0 * out


def _eigen_batch(pts: np.ndarray, neigh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Descending eigenvalues (n, 3) and normals (n, 3) for all neighborhoods."""
    gathered = pts[neigh]                                  # (n, k, 3)
    centered = gathered - gathered.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / neigh.shape[1]
    evals, evecs = np.linalg.eigh(cov)                     # ascending
    evals = np.clip(evals[:, ::-1], 0.0, None)
    normals = evecs[:, :, 0]                               # smallest eigenvalue
    s = np.sign(normals[:, 2])
    s = np.where(s == 0, np.sign(normals[:, 0]), s)
    s = np.where(s == 0, np.sign(normals[:, 1]), s)
    s = np.where(s == 0, 1.0, s)
    return evals, normals * s[:, None]


def _mono_features(cloud: PointCloud, k: int, dtm_cell: float) -> np.ndarray:
    """The nine within-epoch channels; stability is filled in separately."""
    n = cloud.n
    index = build_index(cloud)
    kk = min(k, n)
    neigh, _ = index.knn(cloud.points, kk)                 # self included at rank 0

    out = np.zeros((n, 10))
    if kk >= 3:
        evals, normals = _eigen_batch(cloud.points, neigh)
        l1 = evals[:, 0]
        ok = l1 > 0.0
        out[:, 0:3] = np.where(ok[:, None], normals, [0.0, 0.0, 1.0])
        with np.errstate(invalid="ignore", divide="ignore"):
            out[ok, 3] = (evals[ok, 0] - evals[ok, 1]) / l1[ok]
            out[ok, 4] = (evals[ok, 1] - evals[ok, 2]) / l1[ok]
        out[:, 5] = np.cbrt(evals[:, 0] * evals[:, 1] * evals[:, 2])
    else:
        out[:, 2] = 1.0  # degenerate: default upward normal, zero shape features

    z = cloud.points[:, 2]
    nz = z[neigh]                                          # (n, k)
    out[:, 6] = nz.max(axis=1) - nz.min(axis=1)
    self_idx = np.arange(n)
    below = (nz < z[:, None]) | ((nz == z[:, None]) & (neigh < self_idx[:, None]))
    out[:, 7] = below.sum(axis=1)

    dtm = build_dtm(cloud, cell=dtm_cell)
    out[:, 8] = normalized_height(cloud.points, dtm)
    return out


def compute_all_features(
    pc1: PointCloud,
    pc2: PointCloud,
    k: int = DEFAULT_K,
    r_stab: float = DEFAULT_STABILITY_RADIUS,
    dtm_cell: float = DEFAULT_DTM_CELL,
) -> tuple[np.ndarray, np.ndarray]:
    """All ten channels for both epochs of a tile pair.

    Run on full tiles before any cylinder cropping so neighborhoods and the
    ground raster see the complete scene. Stability for each epoch counts
    the *other* epoch's points.
    """
    if pc1.n == 0 or pc2.n == 0:
        raise ValueError("feature computation needs both clouds non-empty")
    f1 = _mono_features(pc1, k, dtm_cell)
    f2 = _mono_features(pc2, k, dtm_cell)
    idx1 = build_index(pc1)
    idx2 = build_index(pc2)
    f1[:, 9] = stability(pc1.points, idx2, r_stab)
    f2[:, 9] = stability(pc2.points, idx1, r_stab)
    return f1, f2


def feature_stats(feature_blocks: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over training features; zero spread maps to std 1."""
    stacked = np.concatenate(feature_blocks, axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0.0] = 1.0
    return mean, std


def standardize(features: np.ndarray, stats: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    mean, std = stats
    return (features - mean) / std
