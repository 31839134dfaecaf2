"""Density clustering: mutual-reachability minimum spanning tree, condensed
cluster hierarchy, and excess-of-mass cluster extraction.

Outliers receive label -1. Cluster labels are numbered by descending cluster
size with ties going to the cluster containing the smallest point index, so
output labelings are stable for a fixed input order.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from fintext.errors import ParameterError, ValidationError
from fintext.reduce import pairwise_distances

OUTLIER = -1


@dataclass
class HdbscanConfig:
    min_cluster_size: int = 2
    min_samples: int = 1

    def __post_init__(self):
        if self.min_cluster_size < 2:
            raise ParameterError(
                f"min_cluster_size must be >= 2, got {self.min_cluster_size}"
            )
        if self.min_samples < 1:
            raise ParameterError(f"min_samples must be >= 1, got {self.min_samples}")


@dataclass
class ClusterAssignment:
    """Per-point labels (-1 = outlier), per-point membership probability,
    and per-cluster stability."""

    labels: np.ndarray
    probabilities: np.ndarray
    stabilities: dict[int, float]

    def __post_init__(self):
        if self.labels.shape != self.probabilities.shape:
            raise ValidationError("labels and probabilities must align")

    @property
    def n_clusters(self) -> int:
        return len(self.stabilities)


def _distance_matrix(X, metric: str) -> np.ndarray:
    if metric == "precomputed":
        d = np.asarray(X, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValidationError("precomputed distance matrix must be square")
        return d
    arr = np.asarray(getattr(X, "data", X), dtype=np.float64)
    return pairwise_distances(arr, metric)


def core_distances(X, min_samples: int = 1, metric: str = "euclidean") -> np.ndarray:
    """Distance to the min_samples-th nearest neighbor, self excluded."""
    d = _distance_matrix(X, metric)
    n = d.shape[0]
    if n <= min_samples:
        raise ParameterError(
            f"need more points ({n}) than min_samples ({min_samples})"
        )
    d = d.copy()
    np.fill_diagonal(d, np.inf)
    return np.sort(d, axis=1)[:, min_samples - 1]


def mutual_reachability_mst(
    X, core: np.ndarray, metric: str = "euclidean"
) -> np.ndarray:
    """Minimum spanning tree under
    ``d_mr(a, b) = max(core_a, core_b, d(a, b))`` via quadratic Prim.

    Returns an (n-1, 3) array of (a, b, weight) edges.
    """
    d = _distance_matrix(X, metric)
    n = d.shape[0]
    if core.shape != (n,):
        raise ValidationError(f"core distances shape {core.shape} != ({n},)")
    d_mr = np.maximum(np.maximum(d, core[:, None]), core[None, :])
    np.fill_diagonal(d_mr, np.inf)

    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = d_mr[0].copy()
    best_from = np.zeros(n, dtype=np.int64)
    best[0] = np.inf
    edges = np.empty((n - 1, 3))
    for t in range(n - 1):
        nxt = int(np.argmin(best))
        edges[t] = (best_from[nxt], nxt, best[nxt])
        in_tree[nxt] = True
        row = d_mr[nxt]
        improve = (~in_tree) & (row < best)
        best[improve] = row[improve]
        best_from[improve] = nxt
        best[nxt] = np.inf
    return edges


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(2 * n - 1, dtype=np.int64)
        self.size = np.concatenate(
            [np.ones(n, dtype=np.int64), np.zeros(n - 1, dtype=np.int64)]
        )
        self.next_label = n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, ra: int, rb: int) -> int:
        new = self.next_label
        self.parent[ra] = self.parent[rb] = new
        self.size[new] = self.size[ra] + self.size[rb]
        self.next_label += 1
        return new


def _single_linkage(edges: np.ndarray, n: int):
    """Dendrogram from MST edges sorted by ascending weight.

    Internal node t (0-based) gets id n + t; returns child/dist/size arrays
    indexed by internal node id minus n.
    """
    a = np.minimum(edges[:, 0], edges[:, 1]).astype(np.int64)
    b = np.maximum(edges[:, 0], edges[:, 1]).astype(np.int64)
    w = edges[:, 2]
    order = np.lexsort((b, a, w))
    uf = _UnionFind(n)
    left = np.empty(n - 1, dtype=np.int64)
    right = np.empty(n - 1, dtype=np.int64)
    dist = np.empty(n - 1)
    size = np.empty(n - 1, dtype=np.int64)
    for t, e in enumerate(order):
        ra, rb = uf.find(a[e]), uf.find(b[e])
        left[t], right[t] = min(ra, rb), max(ra, rb)
        dist[t] = w[e]
        size[t] = uf.size[ra] + uf.size[rb]
        uf.union(ra, rb)
    return left, right, dist, size


def _subtree_leaves(node: int, n: int, left, right) -> list[int]:
    out: list[int] = []
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur < n:
            out.append(cur)
        else:
            stack.append(left[cur - n])
            stack.append(right[cur - n])
    return out


def _lam(distance: float) -> float:
    return 1.0 / distance if distance > 0.0 else np.inf


def _contribution(lam: float, birth: float) -> float:
    if np.isinf(lam) and np.isinf(birth):
        return 0.0
    return lam - birth


def condense_and_extract(mst: np.ndarray, cfg: HdbscanConfig) -> ClusterAssignment:
    """Condense the single-linkage dendrogram and extract clusters by
    excess of mass (lambda = 1 / distance).

    Splits survive only when both sides reach ``min_cluster_size``; smaller
    sides fall out of the running cluster as candidate outliers. A cluster is
    selected when its stability is at least the sum of its children's; points
    that left the hierarchy above every selected cluster are labeled -1. When
    no split ever survives, the root itself is the single cluster.
    """
    mst = np.asarray(mst, dtype=np.float64)
    n = mst.shape[0] + 1
    left, right, dist, size = _single_linkage(mst, n)

    def node_size(node: int) -> int:
        return 1 if node < n else int(size[node - n])

    # condensed tree: cluster 0 is the root
    point_rows: list[tuple[int, int, float]] = []  # (cluster, point, lambda)
    cluster_rows: list[tuple[int, int, float, int]] = []  # (parent, child, lambda, size)
    birth: dict[int, float] = {0: 0.0}
    next_cluster = 1
    root = 2 * n - 2
    stack: list[tuple[int, int]] = [(root, 0)]
    mcs = cfg.min_cluster_size
    while stack:
        node, cluster = stack.pop()
        l, r = int(left[node - n]), int(right[node - n])
        lam = _lam(float(dist[node - n]))
        ls, rs = node_size(l), node_size(r)
        if ls >= mcs and rs >= mcs:
            for child, child_size in ((l, ls), (r, rs)):
                cid = next_cluster
                next_cluster += 1
                cluster_rows.append((cluster, cid, lam, child_size))
                birth[cid] = lam
                stack.append((child, cid))
        elif ls < mcs and rs < mcs:
            for p in _subtree_leaves(l, n, left, right):
                point_rows.append((cluster, p, lam))
            for p in _subtree_leaves(r, n, left, right):
                point_rows.append((cluster, p, lam))
        else:
            small, big = (l, r) if ls < mcs else (r, l)
            for p in _subtree_leaves(small, n, left, right):
                point_rows.append((cluster, p, lam))
            stack.append((big, cluster))

    stability: dict[int, float] = defaultdict(float)
    for cluster, _, lam in point_rows:
        stability[cluster] += _contribution(lam, birth[cluster])
    for parent, _, lam, child_size in cluster_rows:
        stability[parent] += _contribution(lam, birth[parent]) * child_size

    children: dict[int, list[int]] = defaultdict(list)
    parent_of: dict[int, int] = {}
    for parent, child, _, _ in cluster_rows:
        children[parent].append(child)
        parent_of[child] = parent

    # excess of mass, root excluded from the competition
    selected: dict[int, bool] = {}
    eff = dict(stability)
    for cluster in range(next_cluster - 1, 0, -1):
        subtree = sum(eff[child] for child in children.get(cluster, []))
        if eff.get(cluster, 0.0) < subtree:
            selected[cluster] = False
            eff[cluster] = subtree
        else:
            selected[cluster] = True
            queue = list(children.get(cluster, []))
            while queue:
                sub = queue.pop()
                selected[sub] = False
                queue.extend(children.get(sub, []))
    chosen = {c for c in range(1, next_cluster) if selected.get(c)}
    if not chosen:
        chosen = {0}

    # nearest selected ancestor-or-self for every condensed cluster
    owner: dict[int, int | None] = {}
    for cluster in range(next_cluster):
        if cluster in chosen:
            owner[cluster] = cluster
        elif cluster == 0:
            owner[cluster] = None
        else:
            owner[cluster] = owner[parent_of[cluster]]

    members: dict[int, list[tuple[int, float]]] = defaultdict(list)
    for cluster, point, lam in point_rows:
        own = owner[cluster]
        if own is not None:
            members[own].append((point, lam))

    ordered = sorted(
        members,
        key=lambda c: (-len(members[c]), min(p for p, _ in members[c])),
    )
    labels = np.full(n, OUTLIER, dtype=np.int64)
    probabilities = np.zeros(n)
    stabilities: dict[int, float] = {}
    for label, cluster in enumerate(ordered):
        stab = stability[cluster]
        stabilities[label] = float(stab) if np.isfinite(stab) else 0.0
        lam_values = [lam for _, lam in members[cluster]]
        lam_max = max(lam_values)
        for point, lam in members[cluster]:
            labels[point] = label
            if not np.isfinite(lam_max) or lam_max == 0.0:
                probabilities[point] = 1.0
            else:
                probabilities[point] = min(lam, lam_max) / lam_max
    return ClusterAssignment(
        labels=labels, probabilities=probabilities, stabilities=stabilities
    )


def hdbscan_cluster(
    X, cfg: HdbscanConfig | None = None, metric: str = "euclidean"
) -> ClusterAssignment:
    """core distances -> mutual-reachability MST -> condensed extraction."""
    cfg = cfg or HdbscanConfig()
    core = core_distances(X, cfg.min_samples, metric)
    mst = mutual_reachability_mst(X, core, metric)
    return condense_and_extract(mst, cfg)
