import numpy as np
import pytest

from rosanna.cones import cone_count
from rosanna.dataset import SyntheticSpec, VectorSet, gen_synthetic, linear_scan_batch
from rosanna.index import build, search_batch
from rosanna.preprocess import (build_two_stage, intrinsic_dim, kmeans_fit, pca_fit, pca_transform,
                                two_stage_search)


def _two_stage_batch(ts, queries, w, c):
    scratch = ts.new_scratch()
    out = [two_stage_search(ts, q, w, c, scratch) for q in queries]
    return np.array([i for i, _ in out]), np.array([d for _, d in out])


class TestPca:
    def test_line_has_one_component(self):
        t = np.linspace(-3, 3, 50)[:, None]
        data = (t * np.array([[1.0, 2.0, -2.0]]) + 1.0).astype(np.float32)
        model = pca_fit(VectorSet(data))
        assert model.eigvals[0] > 1.0
        np.testing.assert_allclose(model.eigvals[1:], 0.0, atol=1e-5)
        np.testing.assert_allclose(np.abs(model.eigvecs[:, 0]), [1 / 3, 2 / 3, 2 / 3], atol=1e-6)

    def test_isotropic(self):
        vs = gen_synthetic(SyntheticSpec("gaussian", 10**5, 8, seed=4))
        lam = pca_fit(vs).eigvals
        assert np.all(np.abs(lam / lam.sum() - 0.125) < 0.01)

    def test_geometric_spectrum_energy(self):
        k, rho = 128, 0.9
        scales = np.sqrt(rho ** np.arange(k))
        x = np.random.default_rng(0).standard_normal((20000, k)) * scales
        model = pca_fit(VectorSet(x.astype(np.float32)))
        expected = (1 - rho**16) / (1 - rho**k)
        assert abs(model.energy(16) - expected) < 0.01
        np.testing.assert_allclose(model.eigvals.sum(), x.var(axis=0, ddof=1).sum(), rtol=1e-4)

    def test_sorted_and_orthonormal(self):
        vs = gen_synthetic(SyntheticSpec("laplace", 2000, 6, seed=1))
        model = pca_fit(vs)
        assert np.all(np.diff(model.eigvals) <= 0)
        np.testing.assert_allclose(model.eigvecs.T @ model.eigvecs, np.eye(6), atol=1e-10)
        np.testing.assert_allclose(model.inverse(model.transform(vs.data)), vs.data, atol=1e-4)

    def test_full_classification_space(self):
        vs = gen_synthetic(SyntheticSpec("gaussian", 500, 5, seed=2))
        cls, full = pca_transform(pca_fit(vs), vs, d_classify=5)
        assert cls == full
        cls3, _ = pca_transform(pca_fit(vs), vs, d_classify=3)
        assert cls3.k == 3
        with pytest.raises(ValueError):
            pca_transform(pca_fit(vs), vs, d_classify=6)


class TestIntrinsicDim:
    @pytest.mark.parametrize("d", [1, 3, 16, 38])
    def test_uniform(self, d):
        assert intrinsic_dim(np.r_[np.full(d, 2.5), np.zeros(5)]) == pytest.approx(d, rel=1e-12)

    def test_spike(self):
        assert intrinsic_dim([7.0, 0.0, 0.0]) == 1.0

    def test_scale_invariant_and_bounded(self):
        lam = np.random.default_rng(0).random(20)
        assert intrinsic_dim(lam) == pytest.approx(intrinsic_dim(1e3 * lam))
        assert 1.0 <= intrinsic_dim(lam) <= 20.0

    def test_zero_spectrum(self):
        with pytest.raises(ValueError):
            intrinsic_dim(np.zeros(4))


class TestKmeans:
    def test_single_cluster_is_mean(self):
        vs = gen_synthetic(SyntheticSpec("gaussian", 300, 4, seed=0))
        q = kmeans_fit(vs, 1)
        np.testing.assert_allclose(q.centroids[0], vs.data.astype(np.float64).mean(axis=0), atol=1e-12)
        assert len(q.distortion_history) <= 3

    def test_one_cluster_per_point(self):
        vs = gen_synthetic(SyntheticSpec("gaussian", 40, 3, seed=0))
        q = kmeans_fit(vs, 40)
        assert q.distortion_history[-1] == 0.0
        assert sorted(q.assignments) == list(range(40))

    def test_distortion_non_increasing(self):
        vs = gen_synthetic(SyntheticSpec("uniform", 3000, 4, seed=1))
        h = kmeans_fit(vs, 20, max_iters=50, seed=3).distortion_history
        assert all(b <= a * (1 + 1e-12) for a, b in zip(h, h[1:]))

    def test_deterministic(self):
        vs = gen_synthetic(SyntheticSpec("gaussian", 500, 4, seed=1))
        np.testing.assert_array_equal(kmeans_fit(vs, 8, seed=2).centroids,
                                      kmeans_fit(vs, 8, seed=2).centroids)

    def test_duplicate_points(self):
        # more clusters than distinct points forces empty-cluster reseeding
        vs = VectorSet(np.repeat(np.eye(3, dtype=np.float32), 10, axis=0))
        q = kmeans_fit(vs, 5, seed=0)
        assert q.distortion_history[-1] == 0.0

    def test_bad_m(self):
        vs = VectorSet(np.ones((3, 2), np.float32))
        with pytest.raises(ValueError):
            kmeans_fit(vs, 4)


class TestTwoStage:
    @pytest.fixture(scope="class")
    @classmethod
    def data(cls):
        base = gen_synthetic(SyntheticSpec("gaussian", 5000, 8, seed=21))
        queries = gen_synthetic(SyntheticSpec("gaussian", 200, 8, seed=22)).data
        return base, queries, linear_scan_batch(base, queries)

    def test_single_cluster_is_plain_search(self, data):
        base, queries, _ = data
        ts = build_two_stage(base, kmeans_fit(base, 1), g=3, r_count=4, seed=5)
        ids, dists = _two_stage_batch(ts, queries, 1, 3)
        plain = search_batch(build(base, 3, 4, seed=5), queries, c=3)
        np.testing.assert_array_equal(ids, plain.nn_id)
        np.testing.assert_array_equal(dists, plain.nn_dist_sq)

    def test_all_clusters_exhaustive(self, data):
        base, queries, gt = data
        ts = build_two_stage(base, kmeans_fit(base, 6, seed=1), g=2, r_count=1)
        ids, dists = _two_stage_batch(ts, queries, 6, cone_count(8, 2))
        np.testing.assert_array_equal(dists, gt.nn_dist_sq)

    def test_monotone_in_w(self, data):
        base, queries, gt = data
        ts = build_two_stage(base, kmeans_fit(base, 16, seed=1), g=3, r_count=2)
        prev = np.full(len(queries), np.inf)
        for w in (1, 2, 4, 8, 16):
            _, d = _two_stage_batch(ts, queries, w, 4)
            assert np.all(d <= prev)
            prev = d

    def test_bad_w(self, data):
        base, queries, _ = data
        ts = build_two_stage(base, kmeans_fit(base, 2), g=2, r_count=1)
        with pytest.raises(ValueError):
            two_stage_search(ts, queries[0], w=3)
