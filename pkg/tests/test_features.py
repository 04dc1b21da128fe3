"""Geometric feature oracles: Jacobi eigensolver, analytic scenes, counts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpchange.cloud import PointCloud, build_index
from kpchange.features import (
    DtmGrid,
    EigenTriple,
    build_dtm,
    compute_all_features,
    covariance_eigen,
    eigenfeatures,
    feature_stats,
    height_features,
    normal_vector,
    normalized_height,
    stability,
    standardize,
)


def jacobi_eigh(a, sweeps=50, tol=1e-14):
    """Independent oracle: cyclic Jacobi rotations on a symmetric 3x3 matrix.

    Returns eigenvalues ascending. Deliberately shares nothing with
    np.linalg.eigh.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] ** 2
        if off < tol ** 2:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


class TestCovarianceEigen:
    def test_collinear_rank_one(self):
        pts = np.array([[i, 0.0, 0.0] for i in range(6)])
        e = covariance_eigen(pts)
        assert e.eigenvalues[1] == pytest.approx(0.0, abs=1e-12)
        assert e.eigenvalues[2] == pytest.approx(0.0, abs=1e-12)

    def test_square_grid_planar(self):
        pts = np.array([[x, y, 0.0] for x in range(4) for y in range(4)])
        e = covariance_eigen(pts)
        assert e.eigenvalues[0] == pytest.approx(e.eigenvalues[1], rel=1e-12)
        assert e.eigenvalues[2] == pytest.approx(0.0, abs=1e-12)

    def test_matches_jacobi_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            pts = rng.normal(size=(10, 3))
            e = covariance_eigen(pts)
            centered = pts - pts.mean(axis=0)
            cov = centered.T @ centered / 10
            oracle = jacobi_eigh(cov)[::-1]
            assert np.allclose(e.eigenvalues, oracle, atol=1e-8)

    def test_too_few_points_degenerate(self):
        e = covariance_eigen(np.zeros((2, 3)))
        assert e.degenerate

    def test_eigenvectors_orthonormal(self):
        rng = np.random.default_rng(1)
        e = covariance_eigen(rng.normal(size=(20, 3)))
        assert np.allclose(e.eigenvectors.T @ e.eigenvectors, np.eye(3), atol=1e-9)


class TestEigenfeatures:
    def test_arithmetic(self):
        e = EigenTriple(np.array([4.0, 2.0, 1.0]), np.eye(3))
        lin, pla, omn = eigenfeatures(e)
        assert lin == pytest.approx(0.5)
        assert pla == pytest.approx(0.25)
        assert omn == pytest.approx(2.0)

    def test_isotropic(self):
        e = EigenTriple(np.array([3.0, 3.0, 3.0]), np.eye(3))
        assert eigenfeatures(e) == pytest.approx((0.0, 0.0, 3.0))

    def test_pure_line(self):
        e = EigenTriple(np.array([5.0, 0.0, 0.0]), np.eye(3))
        assert eigenfeatures(e) == pytest.approx((1.0, 0.0, 0.0))

    def test_all_zero_degenerate(self):
        e = EigenTriple(np.zeros(3), np.eye(3), degenerate=True)
        assert eigenfeatures(e) == (0.0, 0.0, 0.0)

    @given(st.tuples(st.floats(0.1, 100), st.floats(0.1, 100), st.floats(0.1, 100)))
    @settings(max_examples=50, deadline=None)
    def test_identity_lin_plus_pla_plus_ratio(self, lams):
        l = np.sort(np.array(lams))[::-1]
        lin, pla, _ = eigenfeatures(EigenTriple(l, np.eye(3)))
        assert lin + pla + l[2] / l[0] == pytest.approx(1.0, abs=1e-9)


class TestNormals:
    def test_horizontal_patch(self):
        rng = np.random.default_rng(2)
        pts = np.column_stack([rng.uniform(0, 5, 30), rng.uniform(0, 5, 30), np.zeros(30)])
        n = normal_vector(covariance_eigen(pts))
        assert np.allclose(n, [0, 0, 1], atol=1e-9)

    def test_vertical_wall_sign_rule(self):
        rng = np.random.default_rng(3)
        pts = np.column_stack([np.zeros(30), rng.uniform(0, 5, 30), rng.uniform(0, 5, 30)])
        n = normal_vector(covariance_eigen(pts))
        assert np.allclose(n, [1, 0, 0], atol=1e-9)

    def test_known_plane_normal(self):
        rng = np.random.default_rng(4)
        target = np.array([1.0, 2.0, 2.0]) / 3.0
        u = np.array([2.0, -1.0, 0.0]) / np.sqrt(5)
        v = np.cross(target, u)
        coef = rng.uniform(-3, 3, (40, 2))
        pts = coef[:, :1] * u + coef[:, 1:] * v
        n = normal_vector(covariance_eigen(pts))
        assert min(np.abs(n - target).max(), np.abs(n + target).max()) < 1e-6

    def test_rigid_invariance(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(15, 3))
        e0 = covariance_eigen(pts)
        shifted = covariance_eigen(pts + np.array([100.0, -40.0, 7.0]))
        assert np.allclose(e0.eigenvalues, shifted.eigenvalues, atol=1e-9)
        assert np.allclose(eigenfeatures(e0), eigenfeatures(shifted), atol=1e-9)
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1.0]])
        rotated = covariance_eigen(pts @ rot.T)
        assert np.allclose(e0.eigenvalues, rotated.eigenvalues, atol=1e-9)


class TestHeightFeatures:
    def test_flat_neighborhood(self):
        zr, rank = height_features(5.0, 3, np.full(5, 5.0), np.array([1, 2, 3, 4, 5]))
        assert zr == 0.0
        assert rank == 2  # indices 1, 2 tie-break below index 3

    def test_local_maximum(self):
        z = np.arange(10.0)
        zr, rank = height_features(9.0, 9, z, np.arange(10))
        assert rank == 9

    def test_staircase(self):
        z = np.arange(10.0)
        zr, rank = height_features(4.0, 4, z, np.arange(10))
        assert zr == 9.0
        assert rank == 4

    def test_rank_bijection_distinct_z(self):
        rng = np.random.default_rng(8)
        z = rng.permutation(10).astype(float)
        idx = np.arange(10)
        ranks = sorted(height_features(z[i], i, z, idx)[1] for i in range(10))
        assert ranks == list(range(10))


class TestDtm:
    def test_flat_plane(self):
        rng = np.random.default_rng(11)
        pts = np.column_stack([rng.uniform(0, 20, 300), rng.uniform(0, 20, 300), np.full(300, 2.0)])
        dtm = build_dtm(PointCloud(points=pts), cell=5.0)
        assert np.allclose(dtm.heights, 2.0)

    def test_building_cells_keep_ground(self):
        # ground everywhere at z=0 plus a roof patch at z=10 in one corner
        g = np.array([[x + 0.5, y + 0.5, 0.0] for x in range(10) for y in range(10)])
        roof = np.array([[1.2, 1.2, 10.0], [1.7, 1.4, 10.0]])
        dtm = build_dtm(PointCloud(points=np.vstack([g, roof])), cell=1.0)
        assert np.allclose(dtm.heights, 0.0)  # min-z wins inside roof cells

    def test_occluded_cells_inherit_nearest(self):
        # ground on the left half only; right half must copy from the left rim
        pts = np.array([[x + 0.5, y + 0.5, float(x)] for x in range(3) for y in range(3)])
        cloud = PointCloud(points=np.vstack([pts, [[5.5, 1.5, 99.0]]]))
        dtm = build_dtm(cloud, cell=1.0)
        assert dtm.heights[1, 3] == 2.0  # empty cell next to the x=2 column

    def test_single_point_propagates(self):
        dtm = build_dtm(PointCloud(points=np.array([[3.0, 4.0, 7.0]])), cell=1.0)
        assert np.allclose(dtm.heights, 7.0)

    def test_normalized_height_clamps(self):
        dtm = DtmGrid(heights=np.array([[1.0]]), cell=10.0, origin=(0.0, 0.0))
        nh = normalized_height(np.array([[1.0, 1.0, 0.9], [2.0, 2.0, 11.0], [0.0, 0.0, 1.0]]), dtm)
        assert np.allclose(nh, [0.0, 10.0, 0.0])


class TestStability:
    def _plane(self, z, n=400, seed=0):
        rng = np.random.default_rng(seed)
        return np.column_stack([rng.uniform(0, 40, n), rng.uniform(0, 40, n), np.full(n, z)])

    def test_identical_planes_100(self):
        plane = self._plane(3.0)
        idx = build_index(PointCloud(points=plane))
        vals = stability(plane, idx, r=5.0)
        assert np.allclose(vals, 100.0)

    def test_demolished_column_zero(self):
        ground = self._plane(0.0)
        idx = build_index(PointCloud(points=ground))
        vals = stability(np.array([[20.0, 20.0, 30.0]]), idx, r=5.0)
        assert vals[0] == 0.0

    def test_empty_column_zero(self):
        idx = build_index(PointCloud(points=self._plane(0.0)))
        vals = stability(np.array([[500.0, 500.0, 0.0]]), idx, r=5.0)
        assert vals[0] == 0.0

    def test_bounded_0_100(self):
        rng = np.random.default_rng(21)
        a = rng.uniform(0, 30, (500, 3))
        b = rng.uniform(0, 30, (500, 3))
        idx = build_index(PointCloud(points=b))
        vals = stability(a, idx, r=4.0)
        assert np.all(vals >= 0.0) and np.all(vals <= 100.0)

    def test_counts_match_brute_force(self):
        rng = np.random.default_rng(22)
        a = rng.uniform(0, 20, (50, 3))
        b = rng.uniform(0, 20, (300, 3))
        idx = build_index(PointCloud(points=b))
        vals = stability(a, idx, r=3.0)
        for i, p in enumerate(a):
            n3 = (((b - p) ** 2).sum(axis=1) <= 9.0).sum()
            n2 = (((b[:, :2] - p[:2]) ** 2).sum(axis=1) <= 9.0).sum()
            expect = 100.0 * n3 / n2 if n2 else 0.0
            assert vals[i] == pytest.approx(expect)


class TestComputeAllFeatures:
    def _pair(self, seed=0, n=500):
        rng = np.random.default_rng(seed)
        pts1 = np.column_stack([rng.uniform(0, 50, n), rng.uniform(0, 50, n), np.zeros(n)])
        pts2 = np.column_stack([rng.uniform(0, 50, n), rng.uniform(0, 50, n), np.zeros(n)])
        return PointCloud(points=pts1), PointCloud(points=pts2, epoch_tag="PC2")

    def test_shapes_and_finiteness(self):
        pc1, pc2 = self._pair()
        f1, f2 = compute_all_features(pc1, pc2)
        assert f1.shape == (pc1.n, 10) and f2.shape == (pc2.n, 10)
        assert np.isfinite(f1).all() and np.isfinite(f2).all()

    def test_plane_pair_stability_high(self):
        pc1, pc2 = self._pair()
        f1, f2 = compute_all_features(pc1, pc2, r_stab=5.0)
        interior = (
            (pc1.points[:, 0] > 5) & (pc1.points[:, 0] < 45)
            & (pc1.points[:, 1] > 5) & (pc1.points[:, 1] < 45)
        )
        assert np.all(f1[interior, 9] >= 99.0)

    def test_self_pair_symmetric(self):
        rng = np.random.default_rng(33)
        cloud = PointCloud(points=rng.uniform(0, 30, (400, 3)))
        fa, fb = compute_all_features(cloud, cloud)
        assert np.array_equal(fa, fb)

    def test_normals_unit_and_up(self):
        pc1, pc2 = self._pair(seed=9)
        f1, _ = compute_all_features(pc1, pc2)
        norms = np.linalg.norm(f1[:, :3], axis=1)
        assert np.allclose(norms, 1.0, atol=1e-9)
        assert np.all(f1[:, 2] >= 0.0)

    def test_degenerate_cloud_defaults(self):
        # every point coincident: eigen features default, nothing non-finite
        pts = np.zeros((5, 3))
        f1, f2 = compute_all_features(PointCloud(points=pts), PointCloud(points=pts + 1.0))
        assert np.isfinite(f1).all()
        assert np.allclose(f1[:, 3:6], 0.0)
        assert np.allclose(f1[:, :3], [0.0, 0.0, 1.0])


class TestStandardization:
    def test_stats_and_apply(self):
        rng = np.random.default_rng(55)
        blocks = [rng.normal(2.0, 3.0, (200, 10)), rng.normal(2.0, 3.0, (100, 10))]
        stats = feature_stats(blocks)
        z = standardize(np.concatenate(blocks), stats)
        assert np.allclose(z.mean(axis=0), 0.0, atol=1e-9)
        assert np.allclose(z.std(axis=0), 1.0, atol=1e-9)

    def test_constant_channel_keeps_std_one(self):
        block = np.ones((50, 10))
        mean, std = feature_stats([block])
        assert np.all(std == 1.0)
        assert np.allclose(standardize(block, (mean, std)), 0.0)
