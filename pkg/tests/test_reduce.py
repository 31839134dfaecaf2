"""knn graph, fuzzy membership weights, curve fit, and the SGD embedding."""

import numpy as np
import pytest

from fintext.corpusio import EmbeddingMatrix
from fintext.errors import ParameterError, ValidationError
from fintext.reduce import (
    FuzzyGraph,
    UmapConfig,
    fit_curve_params,
    fuzzy_simplicial_set,
    knn_graph,
    make_epochs_per_sample,
    optimize_embedding,
    smooth_bandwidths,
    umap_reduce,
)
from oracles import knn_oracle


def as_matrix(data, prefix="p"):
    data = np.asarray(data, dtype=np.float32)
    return EmbeddingMatrix(
        ids=[f"{prefix}{i}" for i in range(len(data))], dim=data.shape[1], data=data
    )


class TestKnnGraph:
    def test_collinear_points(self):
        points = np.array([[0.0], [1.0], [3.0]])
        indices, dists = knn_graph(points, 1, metric="euclidean")
        assert indices[:, 0].tolist() == [1, 0, 1]
        assert dists[:, 0].tolist() == [1.0, 1.0, 2.0]

    def test_duplicated_points_are_mutual_neighbors_at_zero(self):
        points = np.array([[2.0, 2.0], [2.0, 2.0], [9.0, 9.0]])
        indices, dists = knn_graph(points, 1, metric="euclidean")
        assert indices[0, 0] == 1 and indices[1, 0] == 0
        assert dists[0, 0] == 0.0 and dists[1, 0] == 0.0

    @pytest.mark.parametrize("metric", ["euclidean", "cosine"])
    def test_matches_exhaustive_oracle(self, metric):
        rng = np.random.default_rng(1)
        points = rng.normal(size=(200, 5))
        indices, dists = knn_graph(points, 15, metric=metric)
        want_idx, want_d = knn_oracle(points, 15, metric)
        assert np.array_equal(indices, want_idx)
        np.testing.assert_allclose(dists, want_d, atol=1e-12)

    def test_distances_non_decreasing(self):
        rng = np.random.default_rng(2)
        _, dists = knn_graph(rng.normal(size=(50, 3)), 10, metric="euclidean")
        assert np.all(np.diff(dists, axis=1) >= 0)

    def test_too_few_points_rejected(self):
        with pytest.raises(ParameterError):
            knn_graph(np.zeros((3, 2)), 3, metric="euclidean")

    def test_zero_norm_row_rejected_for_cosine(self):
        with pytest.raises(ValidationError):
            knn_graph(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]), 1, "cosine")


class TestSmoothBandwidths:
    def test_nearest_neighbor_weight_is_one(self):
        rng = np.random.default_rng(3)
        points = rng.normal(size=(40, 4))
        indices, dists = knn_graph(points, 5, metric="euclidean")
        rho, sigma, _ = smooth_bandwidths(dists)
        weights = np.exp(-np.maximum(dists - rho[:, None], 0.0) / sigma[:, None])
        np.testing.assert_allclose(weights[:, 0], 1.0)

    def test_closed_form_sigma_with_equidistant_tail(self):
        # one neighbor at rho, k-1 = 3 equidistant: 1 + 3 e^{-(d-rho)/sigma} = 2
        r, d = 1.0, 3.0
        dists = np.array([[r, d, d, d]])
        rho, sigma, fallbacks = smooth_bandwidths(dists)
        assert fallbacks == 0
        expected = (d - r) / np.log(3.0)
        assert sigma[0] == pytest.approx(expected, rel=1e-3)
        total = np.sum(np.exp(-np.maximum(dists[0] - rho[0], 0.0) / sigma[0]))
        assert total == pytest.approx(np.log2(4), abs=1e-5)

    def test_sum_constraint_on_random_rows(self):
        rng = np.random.default_rng(4)
        dists = np.sort(rng.uniform(0.1, 2.0, size=(30, 15)), axis=1)
        rho, sigma, fallbacks = smooth_bandwidths(dists)
        assert fallbacks == 0
        sums = np.sum(np.exp(-np.maximum(dists - rho[:, None], 0.0) / sigma[:, None]), axis=1)
        np.testing.assert_allclose(sums, np.log2(15), atol=1e-5)

    def test_all_equidistant_falls_back_to_equal_weights(self):
        # the sum is pinned at k regardless of sigma, so the search cannot
        # converge; the mean-distance fallback leaves every weight equal
        dists = np.full((1, 6), 2.5)
        rho, sigma, fallbacks = smooth_bandwidths(dists)
        assert fallbacks == 1
        assert sigma[0] == pytest.approx(2.5)  # mean distance fallback
        weights = np.exp(-np.maximum(dists[0] - rho[0], 0.0) / sigma[0])
        assert np.all(weights == 1.0)

    def test_fallback_emits_warning_through_fuzzy_graph(self):
        points = np.array([[0.0, 0], [1, 0], [0.5, np.sqrt(3) / 2]])  # equilateral
        indices, dists = knn_graph(points, 2, metric="euclidean")
        with pytest.warns(UserWarning, match="fell back"):
            fuzzy_simplicial_set(indices, dists)


class TestFuzzyGraph:
    def _graph(self, n=40, k=6, seed=5):
        rng = np.random.default_rng(seed)
        points = rng.normal(size=(n, 4))
        indices, dists = knn_graph(points, k, metric="euclidean")
        return fuzzy_simplicial_set(indices, dists), indices, dists

    def test_weights_in_unit_interval_and_symmetric(self):
        graph, _, _ = self._graph()
        mat = graph.matrix.toarray()
        assert np.array_equal(mat, mat.T)
        values = mat[mat > 0]
        assert np.all(values > 0) and np.all(values <= 1.0)
        assert np.all(np.diag(mat) == 0)

    def test_fuzzy_union_identity(self):
        graph, indices, dists = self._graph()
        rho, sigma, _ = smooth_bandwidths(dists)
        weights = np.exp(-np.maximum(dists - rho[:, None], 0.0) / sigma[:, None])
        n = dists.shape[0]
        directed = np.zeros((n, n))
        for i in range(n):
            directed[i, indices[i]] = weights[i]
        expected = directed + directed.T - directed * directed.T
        np.testing.assert_allclose(graph.matrix.toarray(), expected, atol=1e-12)

    def test_mutual_nearest_pair_has_weight_one(self):
        points = np.array([[0.0, 0], [0.1, 0], [5, 5], [5.1, 5], [9, 0]])
        indices, dists = knn_graph(points, 2, metric="euclidean")
        graph = fuzzy_simplicial_set(indices, dists)
        mat = graph.matrix.toarray()
        assert mat[0, 1] == pytest.approx(1.0)  # 1 + 1 - 1*1
        assert mat[2, 3] == pytest.approx(1.0)


class TestCurveFit:
    def test_min_dist_zero_constants(self):
        a, b = fit_curve_params(0.0)
        assert a == pytest.approx(1.929, abs=0.02)
        assert b == pytest.approx(0.7915, abs=0.01)

    def test_matches_independent_least_squares(self):
        from scipy.optimize import curve_fit as scipy_fit

        for min_dist in (0.0, 0.1, 0.5):
            xv = np.linspace(0, 3.0, 300)
            yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist)))
            (a_ref, b_ref), _ = scipy_fit(lambda x, a, b: 1.0 / (1.0 + a * x ** (2 * b)), xv, yv)
            a, b = fit_curve_params(min_dist)
            assert a == pytest.approx(a_ref, rel=1e-6)
            assert b == pytest.approx(b_ref, rel=1e-6)


class TestMakeEpochsPerSample:
    def test_heaviest_edge_sampled_every_epoch(self):
        eps = make_epochs_per_sample(np.array([1.0, 0.5, 0.25]), 100)
        assert eps[0] == 1.0
        assert eps[1] == 2.0
        assert eps[2] == 4.0


class TestOptimizeEmbedding:
    def test_serial_mode_bit_deterministic(self):
        rng = np.random.default_rng(6)
        m = as_matrix(rng.normal(size=(120, 6)))
        cfg = UmapConfig(n_neighbors=8, out_dim=2, metric="euclidean", seed=3, n_epochs=80)
        first = umap_reduce(m, cfg)
        second = umap_reduce(m, cfg)
        assert first.data.tobytes() == second.data.tobytes()
        assert first.ids == m.ids

    def test_output_shape_and_finiteness(self):
        rng = np.random.default_rng(7)
        m = as_matrix(rng.normal(size=(80, 5)))
        cfg = UmapConfig(n_neighbors=6, out_dim=3, metric="cosine", seed=0, n_epochs=60)
        reduced = umap_reduce(m, cfg)
        assert reduced.data.shape == (80, 3)
        assert np.all(np.isfinite(reduced.data))

    def test_two_blobs_separate(self):
        rng = np.random.default_rng(8)
        blobs = np.vstack(
            [rng.normal(0, 0.5, (100, 6)), rng.normal(8, 0.5, (100, 6))]
        )
        m = as_matrix(blobs)
        cfg = UmapConfig(n_neighbors=10, out_dim=4, metric="euclidean", seed=5, n_epochs=150)
        reduced = umap_reduce(m, cfg).data.astype(np.float64)
        c1, c2 = reduced[:100].mean(axis=0), reduced[100:].mean(axis=0)
        gap = np.linalg.norm(c1 - c2)
        within = 0.5 * (
            np.mean(np.linalg.norm(reduced[:100] - c1, axis=1))
            + np.mean(np.linalg.norm(reduced[100:] - c2, axis=1))
        )
        assert gap > 3 * within

    def test_disconnected_graph_falls_back_to_random_init(self):
        rng = np.random.default_rng(9)
        blobs = np.vstack(
            [rng.normal(0, 0.01, (30, 3)), rng.normal(50, 0.01, (30, 3))]
        )
        m = as_matrix(blobs)
        cfg = UmapConfig(n_neighbors=3, out_dim=2, metric="euclidean", seed=1, n_epochs=40)
        reduced = umap_reduce(m, cfg)
        assert np.all(np.isfinite(reduced.data))

    def test_parallel_mode_same_api(self):
        rng = np.random.default_rng(10)
        m = as_matrix(rng.normal(size=(60, 4)))
        cfg = UmapConfig(n_neighbors=5, out_dim=2, metric="euclidean", seed=2, n_epochs=30)
        reduced = umap_reduce(m, cfg, parallel=True)
        assert reduced.data.shape == (60, 2)
        assert np.all(np.isfinite(reduced.data))

    def test_config_invariants(self):
        with pytest.raises(ParameterError):
            UmapConfig(n_neighbors=1)
        with pytest.raises(ParameterError):
            UmapConfig(out_dim=1)
        with pytest.raises(ParameterError):
            UmapConfig(min_dist=-0.1)
        with pytest.raises(ParameterError):
            UmapConfig(metric="manhattan")
        with pytest.raises(ParameterError):
            umap_reduce(as_matrix(np.zeros((5, 2))), UmapConfig(n_neighbors=5))

    def test_epoch_defaults_by_size(self):
        assert UmapConfig().resolve_epochs(500) == 500
        assert UmapConfig().resolve_epochs(20_000) == 200
        assert UmapConfig(n_epochs=77).resolve_epochs(20_000) == 77
