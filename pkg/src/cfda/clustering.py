"""Spectral clustering of PCA score vectors.

Pipeline: Gaussian similarity graph -> symmetric normalized Laplacian ->
row-normalized spectral embedding -> seeded k-means++ / Lloyd iterations.
Because k-means depends on its initialization, :func:`majority_vote` repeats
it ``B`` times and keeps the most frequent partition. :func:`select_g` scores
each candidate number of clusters with the silhouette index.
"""

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cfpca import ScoreMatrix
from .errors import DegenerateEmbedding, EmptyCluster, SingleCluster
from .tables import read_csv, write_csv

MAX_ITER = 100
KMEANS_TOL = 1e-9
MAX_RESTARTS = 20


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    weights: np.ndarray
    sigma: float
    points: np.ndarray
    ids: tuple = None

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class ClusterResult:
    labels: np.ndarray
    centroids: np.ndarray
    G: int
    silhouette_mean: float
    per_point_silhouette: np.ndarray
    vote_share: float = 1.0
    objective: float = float("nan")
    ids: tuple = None
    votes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SelectionRow:
    G: int
    silhouette_mean: float
    vote_share: float


def _points(scores) -> tuple:
    if isinstance(scores, ScoreMatrix):
        return np.asarray(scores.values, dtype=float), scores.ids
    pts = np.asarray(scores, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts, tuple(str(i) for i in range(pts.shape[0]))


def similarity(scores, sigma: float = 1.0) -> SimilarityGraph:
    """Fully connected graph with ``exp(-|xi_i - xi_j|^2 / (2 sigma^2))``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    pts, ids = _points(scores)
    sq = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    W = np.exp(-sq / (2.0 * sigma**2))
    W = (W + W.T) / 2
    np.fill_diagonal(W, 1.0)
    return SimilarityGraph(W, float(sigma), pts, ids)


def laplacian(graph: SimilarityGraph) -> np.ndarray:
    """``I - Dg^-1/2 W Dg^-1/2``."""
    d = graph.weights.sum(axis=1)
    s = 1.0 / np.sqrt(d)
    L = np.eye(graph.n) - s[:, None] * graph.weights * s[None, :]
    return (L + L.T) / 2


def spectral_embedding(graph: SimilarityGraph, G: int) -> np.ndarray:
    """Rows of the ``G`` smallest Laplacian eigenvectors, scaled to unit length."""
    _, vecs = np.linalg.eigh(laplacian(graph))
    U = vecs[:, :G]
    norms = np.linalg.norm(U, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateEmbedding("spectral embedding has a zero row")
    return U / norms[:, None]


def canonicalize(labels) -> np.ndarray:
    """Relabel so cluster 1 holds point 0, cluster 2 the next new cluster, and so on."""
    mapping = {}
    out = np.empty(len(labels), dtype=int)
    for i, lab in enumerate(np.asarray(labels).tolist()):
        if lab not in mapping:
            mapping[lab] = len(mapping) + 1
        out[i] = mapping[lab]
    return out


def _sq_dists(X, C):
    return np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=-1)


def kmeans_pp_init(X, G, rng) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    for _ in range(1, G):
        d2 = _sq_dists(X, np.array(centers)).min(axis=1)
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(X[idx])
    return np.array(centers)


def kmeans(X, G, rng, max_iter=MAX_ITER, tol=KMEANS_TOL):
    """Lloyd's algorithm from a k-means++ start.

    Returns ``(labels, centers, objective_history)``; labels are 0-based.
    An emptied cluster triggers a fresh initialization, at most
    ``MAX_RESTARTS`` times.
    """
    for _ in range(MAX_RESTARTS):
        C = kmeans_pp_init(X, G, rng)
        history = []
        labels = None
        empty = False
        for _ in range(max_iter):
            d2 = _sq_dists(X, C)
            new = d2.argmin(axis=1)
            history.append(float(d2[np.arange(len(X)), new].sum()))
            if np.bincount(new, minlength=G).min() == 0:
                empty = True
                break
            C_new = np.array([X[new == g].mean(axis=0) for g in range(G)])
            shift = float(np.sum((C_new - C) ** 2))
            C, labels = C_new, new
            if shift <= tol:
                break
        if not empty:
            d2 = _sq_dists(X, C)
            labels = d2.argmin(axis=1)
            if np.bincount(labels, minlength=G).min() > 0:
                history.append(float(d2[np.arange(len(X)), labels].sum()))
                return labels, C, history
    raise EmptyCluster(f"k-means left a cluster empty after {MAX_RESTARTS} initializations")


def kmeans_objective(X, labels) -> float:
    total = 0.0
    for g in np.unique(labels):
        pts = X[labels == g]
        total += float(np.sum((pts - pts.mean(axis=0)) ** 2))
    return total


def silhouette(scores, labels, squared: bool = True, literal: bool = False):
    """Mean and per-point silhouette values.

    ``a(i)`` is the mean (squared, by default) distance from point ``i`` to
    the other members of its cluster and ``b(i)`` the smallest mean distance
    to another cluster. Singleton clusters score 0. With ``literal=True``
    ``b(i)`` uses the distance to each other cluster's centroid instead of
    averaging over its members.
    """
    pts, _ = _points(scores)
    labels = np.asarray(labels)
    groups = np.unique(labels)
    if groups.size < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    dist = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    if not squared:
        dist = np.sqrt(dist)
    members = {g: np.flatnonzero(labels == g) for g in groups}
    s = np.zeros(len(pts))
    for i in range(len(pts)):
        own = members[labels[i]]
        if own.size == 1:
            continue
        a = dist[i, own].sum() / (own.size - 1)
        others = []
        for g in groups:
            if g == labels[i]:
                continue
            if literal:
                diff = pts[i] - pts[members[g]].mean(axis=0)
                d = float(diff @ diff)
                others.append(d if squared else np.sqrt(d))
            else:
                others.append(dist[i, members[g]].mean())
        b = min(others)
        denom = max(a, b)
        s[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(s.mean()), s


def _result(graph, labels, vote_share=1.0, objective=float("nan"), votes=None,
            squared=True, literal=False) -> ClusterResult:
    labels = canonicalize(labels)
    G = int(labels.max())
    centroids = np.array([graph.points[labels == g].mean(axis=0) for g in range(1, G + 1)])
    if G >= 2:
        mean_s, per_point = silhouette(graph.points, labels, squared, literal)
    else:
        mean_s, per_point = float("nan"), np.zeros(graph.n)
    return ClusterResult(labels, centroids, G, mean_s, per_point, vote_share, objective,
                         graph.ids, votes or {})


def _check_G(graph, G):
    if not 2 <= G <= graph.n:
        raise ValueError(f"G must be in [2, {graph.n}], got {G}")


def spectral_cluster(graph: SimilarityGraph, G: int, seed: int = 0,
                     squared: bool = True, literal: bool = False) -> ClusterResult:
    """One seeded spectral-clustering run."""
    _check_G(graph, G)
    if G == graph.n:
        return _result(graph, np.arange(graph.n), objective=0.0, squared=squared, literal=literal)
    emb = spectral_embedding(graph, G)
    labels, _, history = kmeans(emb, G, np.random.default_rng(seed))
    return _result(graph, labels, objective=history[-1], squared=squared, literal=literal)


def derive_seeds(master_seed: int, B: int) -> list:
    children = np.random.SeedSequence(master_seed).spawn(B)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def majority_vote(graph: SimilarityGraph, G: int, B: int = 1000, master_seed: int = 0,
                  squared: bool = True, literal: bool = False) -> ClusterResult:
    """Most frequent canonical partition over ``B`` seeded runs.

    The embedding does not depend on the seed, so it is computed once and
    only the k-means step is repeated. Ties go to the lexicographically
    smallest canonical label vector.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    _check_G(graph, G)
    if G == graph.n:
        return spectral_cluster(graph, G, squared=squared, literal=literal)
    emb = spectral_embedding(graph, G)
    counts = Counter()
    objective = {}
    for seed in derive_seeds(master_seed, B):
        labels, _, history = kmeans(emb, G, np.random.default_rng(seed))
        key = tuple(canonicalize(labels).tolist())
        counts[key] += 1
        objective.setdefault(key, kmeans_objective(emb, np.asarray(key)))
    top = max(counts.values())
    best = min(k for k, c in counts.items() if c == top)
    return _result(graph, np.array(best), top / B, objective[best], dict(counts), squared, literal)


def select_g(scores, g_range: Sequence[int] = range(2, 9), B: int = 1000, master_seed: int = 0,
             sigma: float = 1.0, squared: bool = True, literal: bool = False):
    """Silhouette of the majority partition for each ``G``.

    Returns ``(rows, best_G, results)``; ties in silhouette go to the
    smallest ``G``.
    """
    graph = similarity(scores, sigma)
    rows, results = [], {}
    for G in sorted(set(int(g) for g in g_range)):
        res = majority_vote(graph, G, B, master_seed, squared, literal)
        results[G] = res
        rows.append(SelectionRow(G, res.silhouette_mean, res.vote_share))
    best = max(rows, key=lambda r: (r.silhouette_mean, -r.G)).G
    return rows, best, results


# ---------------------------------------------------------------------------
# serialization

CLUSTER_HEADER = ("id", "label", "silhouette")
SELECTION_HEADER = ("G", "silhouette_mean", "vote_share")


def write_cluster_report(target, res: ClusterResult):
    ids = res.ids or tuple(str(i) for i in range(len(res.labels)))
    rows = zip(ids, res.labels.tolist(), res.per_point_silhouette)
    return write_csv(target, CLUSTER_HEADER, rows)


def write_selection(target, rows):
    return write_csv(target, SELECTION_HEADER, ((r.G, r.silhouette_mean, r.vote_share) for r in rows))


def read_cluster_report(source):
    rows = read_csv(source, CLUSTER_HEADER, allow_empty=False)
    return [r["id"] for r in rows], np.array([int(r["label"]) for r in rows])
