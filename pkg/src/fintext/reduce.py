"""Embedding reduction to the topic-modeling space.

Pipeline: exact k-nearest-neighbor graph, fuzzy membership weights with a
per-point bandwidth solved by binary search, fuzzy-union symmetrization, then
stochastic gradient descent on the low-dimensional cross-entropy with
negative sampling. The serial optimizer is bit-deterministic for a fixed
seed; the optional parallel optimizer trades that determinism for speed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
import scipy.sparse
from scipy.optimize import curve_fit
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh

from fintext.corpusio import EmbeddingMatrix
from fintext.errors import ParameterError, ValidationError

SMOOTH_TOLERANCE = 1e-5
SMOOTH_MAX_ITER = 64
MAX_GRAD = 4.0
REPULSION_STRENGTH = 1.0
INITIAL_ALPHA = 1.0


@dataclass
class UmapConfig:
    n_neighbors: int = 15
    out_dim: int = 32
    min_dist: float = 0.0
    n_epochs: int | None = None  # auto: 500 below 10k points, 200 otherwise
    negative_sample_rate: int = 5
    seed: int = 0
    metric: str = "cosine"

    def __post_init__(self):
        if self.n_neighbors < 2:
            raise ParameterError(f"n_neighbors must be >= 2, got {self.n_neighbors}")
        if self.out_dim < 2:
            raise ParameterError(f"out_dim must be >= 2, got {self.out_dim}")
        if self.min_dist < 0:
            raise ParameterError(f"min_dist must be >= 0, got {self.min_dist}")
        if self.negative_sample_rate < 1:
            raise ParameterError("negative_sample_rate must be >= 1")
        if self.metric not in ("cosine", "euclidean"):
            raise ParameterError(f"unsupported metric {self.metric!r}")
        if self.n_epochs is not None and self.n_epochs < 1:
            raise ParameterError("n_epochs must be >= 1 when given")

    def resolve_epochs(self, n_points: int) -> int:
        if self.n_epochs is not None:
            return self.n_epochs
        return 500 if n_points < 10_000 else 200


@dataclass
class FuzzyGraph:
    """Symmetric fuzzy adjacency over point indices, weights in (0, 1]."""

    matrix: scipy.sparse.csr_matrix
    ids: list[str]


def _as_array(X) -> tuple[np.ndarray, list[str]]:
    if isinstance(X, EmbeddingMatrix):
        return X.data.astype(np.float64), list(X.ids)
    arr = np.asarray(X, dtype=np.float64)
    return arr, [str(i) for i in range(arr.shape[0])]


def pairwise_distances(X: np.ndarray, metric: str) -> np.ndarray:
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1)
        zero = np.where(norms == 0.0)[0]
        if zero.size:
            raise ValidationError(f"zero-norm row {zero[0]} under cosine metric")
        xn = X / norms[:, None]
        return np.clip(1.0 - xn @ xn.T, 0.0, None)
    if metric == "euclidean":
        sq = np.sum(X * X, axis=1)
        d2 = np.clip(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0, None)
        return np.sqrt(d2)
    raise ParameterError(f"unsupported metric {metric!r}")


def knn_graph(
    X, n_neighbors: int, metric: str = "cosine"
) -> tuple[np.ndarray, np.ndarray]:
    """Exact k-nearest neighbors per point (self excluded), brute force.

    Returns ``(indices, distances)`` of shape (n, k) with distances
    non-decreasing along each row; ties resolve to the lower point index.
    """
    arr, _ = _as_array(X)
    n = arr.shape[0]
    if n <= n_neighbors:
        raise ParameterError(
            f"need more points ({n}) than neighbors ({n_neighbors})"
        )
    dists = pairwise_distances(arr, metric)
    np.fill_diagonal(dists, np.inf)
    order = np.argsort(dists, axis=1, kind="stable")[:, :n_neighbors]
    rows = np.arange(n)[:, None]
    return order, dists[rows, order]


def smooth_bandwidths(knn_dists: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Per-point (rho, sigma) for the fuzzy membership kernel.

    rho is the nearest-neighbor distance. sigma solves
    ``sum_j exp(-max(0, d_j - rho) / sigma) = log2(k)`` by binary search; rows
    where 64 iterations cannot converge fall back to the row's mean distance.
    Returns the fallback count as the third element.
    """
    n, k = knn_dists.shape
    target = np.log2(k)
    rho = knn_dists[:, 0].copy()
    sigma = np.empty(n)
    fallbacks = 0
    for i in range(n):
        lo, hi, mid = 0.0, np.inf, 1.0
        converged = False
        for _ in range(SMOOTH_MAX_ITER):
            shifted = knn_dists[i] - rho[i]
            psum = float(np.sum(np.exp(-np.maximum(shifted, 0.0) / mid)))
            if abs(psum - target) < SMOOTH_TOLERANCE:
                converged = True
                break
            if psum > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
        if converged:
            sigma[i] = mid
        else:
            sigma[i] = float(np.mean(knn_dists[i]))
            fallbacks += 1
    return rho, sigma, fallbacks


def fuzzy_simplicial_set(
    knn_indices: np.ndarray,
    knn_dists: np.ndarray,
    ids: Sequence[str] | None = None,
) -> FuzzyGraph:
    """Fuzzy weighted graph from knn output, symmetrized by fuzzy union
    ``w_ab + w_ba - w_ab * w_ba``."""
    n, k = knn_indices.shape
    rho, sigma, fallbacks = smooth_bandwidths(knn_dists)
    if fallbacks:
        warnings.warn(
            f"bandwidth search fell back to mean distance for {fallbacks} points",
            stacklevel=2,
        )
    shifted = np.maximum(knn_dists - rho[:, None], 0.0)
    weights = np.exp(-shifted / sigma[:, None])
    rows = np.repeat(np.arange(n), k)
    mat = scipy.sparse.coo_matrix(
        (weights.ravel(), (rows, knn_indices.ravel())), shape=(n, n)
    ).tocsr()
    transpose = mat.T.tocsr()
    sym = mat + transpose - mat.multiply(transpose)
    sym = sym.tocsr()
    sym.setdiag(0.0)
    sym.eliminate_zeros()
    id_list = list(ids) if ids is not None else [str(i) for i in range(n)]
    return FuzzyGraph(matrix=sym, ids=id_list)


def fit_curve_params(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Least-squares (a, b) for the low-dimensional similarity curve
    ``1 / (1 + a * d^(2b))`` matched to an offset exponential."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.zeros(xv.shape)
    yv[xv < min_dist] = 1.0
    yv[xv >= min_dist] = np.exp(-(xv[xv >= min_dist] - min_dist) / spread)
    params, _ = curve_fit(curve, xv, yv)
    return float(params[0]), float(params[1])


def _spectral_init(
    graph: scipy.sparse.csr_matrix, out_dim: int, rng: np.random.Generator
) -> np.ndarray:
    n = graph.shape[0]
    n_components, _ = connected_components(graph, directed=False)
    if n_components > 1 or n < out_dim + 2:
        return rng.uniform(-10.0, 10.0, size=(n, out_dim))
    degrees = np.asarray(graph.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(np.maximum(degrees, 1e-12))
    d_mat = scipy.sparse.diags(inv_sqrt)
    laplacian = scipy.sparse.identity(n) - d_mat @ graph @ d_mat
    try:
        # fixed starting vector keeps the Lanczos iteration reproducible
        _, vectors = eigsh(
            laplacian,
            k=out_dim + 1,
            which="SM",
            v0=np.full(n, 1.0 / np.sqrt(n)),
            tol=1e-4,
            maxiter=n * 5,
        )
        coords = vectors[:, 1 : out_dim + 1]
    except Exception:
        return rng.uniform(-10.0, 10.0, size=(n, out_dim))
    expansion = 10.0 / np.max(np.abs(coords))
    return coords * expansion + rng.normal(scale=1e-4, size=coords.shape)


def make_epochs_per_sample(weights: np.ndarray, n_epochs: int) -> np.ndarray:
    """Sampling cadence per edge so heavier edges are sampled more often."""
    result = -1.0 * np.ones(weights.shape[0])
    n_samples = n_epochs * (weights / weights.max())
    result[n_samples > 0] = float(n_epochs) / n_samples[n_samples > 0]
    return result


@numba.njit(cache=True)
def _clip(val):
    if val > MAX_GRAD:
        return MAX_GRAD
    if val < -MAX_GRAD:
        return -MAX_GRAD
    return val


@numba.njit(cache=True)
def _sgd_serial(
    emb,
    head,
    tail,
    epochs_per_sample,
    n_epochs,
    a,
    b,
    negative_sample_rate,
    rng_state,
):
    n_points, dim = emb.shape
    n_edges = head.shape[0]
    epochs_per_negative = epochs_per_sample / negative_sample_rate
    epoch_of_next = epochs_per_sample.copy()
    epoch_of_next_negative = epochs_per_negative.copy()
    state = rng_state[0]
    mult = numba.uint64(6364136223846793005)
    inc = numba.uint64(1442695040888963407)
    for epoch in range(n_epochs):
        alpha = INITIAL_ALPHA * (1.0 - epoch / n_epochs)
        for e in range(n_edges):
            if epoch_of_next[e] > epoch:
                continue
            i = head[e]
            j = tail[e]
            d2 = 0.0
            for c in range(dim):
                diff = emb[i, c] - emb[j, c]
                d2 += diff * diff
            if d2 > 0.0:
                coeff = (-2.0 * a * b * d2 ** (b - 1.0)) / (a * d2 ** b + 1.0)
            else:
                coeff = 0.0
            for c in range(dim):
                grad = _clip(coeff * (emb[i, c] - emb[j, c]))
                emb[i, c] += grad * alpha
                emb[j, c] -= grad * alpha
            epoch_of_next[e] += epochs_per_sample[e]
            n_neg = int((epoch - epoch_of_next_negative[e]) / epochs_per_negative[e])
            for _ in range(n_neg):
                state = state * mult + inc
                t = int((state >> numba.uint64(33)) % numba.uint64(n_points))
                if t == i:
                    continue
                d2 = 0.0
                for c in range(dim):
                    diff = emb[i, c] - emb[t, c]
                    d2 += diff * diff
                if d2 > 0.0:
                    coeff = (2.0 * REPULSION_STRENGTH * b) / (
                        (0.001 + d2) * (a * d2 ** b + 1.0)
                    )
                    for c in range(dim):
                        grad = _clip(coeff * (emb[i, c] - emb[t, c]))
                        emb[i, c] += grad * alpha
                else:
                    for c in range(dim):
                        emb[i, c] += MAX_GRAD * alpha
            epoch_of_next_negative[e] += n_neg * epochs_per_negative[e]
    rng_state[0] = state


@numba.njit(cache=True, parallel=True)
def _sgd_parallel(
    emb,
    head,
    tail,
    epochs_per_sample,
    n_epochs,
    a,
    b,
    negative_sample_rate,
    seed,
):
    # Hogwild-style asynchronous updates: fast, but not deterministic.
    n_points, dim = emb.shape
    n_edges = head.shape[0]
    epochs_per_negative = epochs_per_sample / negative_sample_rate
    epoch_of_next = epochs_per_sample.copy()
    epoch_of_next_negative = epochs_per_negative.copy()
    mult = numba.uint64(6364136223846793005)
    inc = numba.uint64(1442695040888963407)
    for epoch in range(n_epochs):
        alpha = INITIAL_ALPHA * (1.0 - epoch / n_epochs)
        for e in numba.prange(n_edges):
            if epoch_of_next[e] > epoch:
                continue
            state = numba.uint64(seed) ^ (numba.uint64(e) * mult + numba.uint64(epoch))
            i = head[e]
            j = tail[e]
            d2 = 0.0
            for c in range(dim):
                diff = emb[i, c] - emb[j, c]
                d2 += diff * diff
            if d2 > 0.0:
                coeff = (-2.0 * a * b * d2 ** (b - 1.0)) / (a * d2 ** b + 1.0)
            else:
                coeff = 0.0
            for c in range(dim):
                grad = _clip(coeff * (emb[i, c] - emb[j, c]))
                emb[i, c] += grad * alpha
                emb[j, c] -= grad * alpha
            epoch_of_next[e] += epochs_per_sample[e]
            n_neg = int((epoch - epoch_of_next_negative[e]) / epochs_per_negative[e])
            for _ in range(n_neg):
                state = state * mult + inc
                t = int((state >> numba.uint64(33)) % numba.uint64(n_points))
                if t == i:
                    continue
                d2 = 0.0
                for c in range(dim):
                    diff = emb[i, c] - emb[t, c]
                    d2 += diff * diff
                if d2 > 0.0:
                    coeff = (2.0 * REPULSION_STRENGTH * b) / (
                        (0.001 + d2) * (a * d2 ** b + 1.0)
                    )
                    for c in range(dim):
                        grad = _clip(coeff * (emb[i, c] - emb[t, c]))
                        emb[i, c] += grad * alpha
                else:
                    for c in range(dim):
                        emb[i, c] += MAX_GRAD * alpha
            epoch_of_next_negative[e] += n_neg * epochs_per_negative[e]


def optimize_embedding(
    graph: FuzzyGraph, cfg: UmapConfig, parallel: bool = False
) -> EmbeddingMatrix:
    """Low-dimensional coordinates minimizing the fuzzy cross-entropy.

    Attraction samples edges proportionally to weight; each attraction incurs
    ``negative_sample_rate`` random repulsions. The learning rate anneals
    linearly from 1 to 0. Serial mode (default) is bit-reproducible for a
    fixed seed.
    """
    matrix = graph.matrix.copy().tocsr()
    n = matrix.shape[0]
    n_epochs = cfg.resolve_epochs(n)
    a, b = fit_curve_params(cfg.min_dist)
    rng = np.random.default_rng(cfg.seed)
    emb = np.ascontiguousarray(_spectral_init(matrix, cfg.out_dim, rng), dtype=np.float64)

    # drop edges sampled less than once over the whole schedule
    if matrix.nnz == 0:
        raise ValidationError("fuzzy graph has no edges")
    cutoff = matrix.data.max() / float(n_epochs)
    matrix.data[matrix.data < cutoff] = 0.0
    matrix.eliminate_zeros()
    coo = matrix.tocoo()
    epochs_per_sample = make_epochs_per_sample(coo.data, n_epochs)
    head = coo.row.astype(np.int64)
    tail = coo.col.astype(np.int64)

    if parallel:
        _sgd_parallel(
            emb,
            head,
            tail,
            epochs_per_sample,
            n_epochs,
            a,
            b,
            cfg.negative_sample_rate,
            np.uint64(cfg.seed),
        )
    else:
        state = np.array([np.uint64(cfg.seed) * np.uint64(2654435761) + np.uint64(1)],
                         dtype=np.uint64)
        _sgd_serial(
            emb,
            head,
            tail,
            epochs_per_sample,
            n_epochs,
            a,
            b,
            cfg.negative_sample_rate,
            state,
        )
    return EmbeddingMatrix(ids=list(graph.ids), dim=cfg.out_dim, data=emb.astype(np.float32))


def umap_reduce(
    m: EmbeddingMatrix, cfg: UmapConfig, parallel: bool = False
) -> EmbeddingMatrix:
    """knn graph -> fuzzy weights -> optimized low-dimensional embedding."""
    if len(m) <= cfg.n_neighbors:
        raise ParameterError(
            f"need more points ({len(m)}) than n_neighbors ({cfg.n_neighbors})"
        )
    indices, dists = knn_graph(m, cfg.n_neighbors, cfg.metric)
    graph = fuzzy_simplicial_set(indices, dists, ids=m.ids)
    return optimize_embedding(graph, cfg, parallel=parallel)
