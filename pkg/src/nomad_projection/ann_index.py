"""K-Means based approximate nearest neighbour index.

Points are clustered (sign-random-projection hashing seeds the centroids,
Lloyd iterations refine them) and neighbours are searched exhaustively
*inside* each cluster only. Every edge of the resulting graph therefore
stays inside one cluster, which is what lets whole clusters be handed to
separate workers without splitting any neighbourhood.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ParameterError, ValidationError

_CHUNK = 4096


@dataclass(frozen=True)
class ClusterAssignment:
    assignment: np.ndarray  # (n,) int64 in [0, C)
    centroids: np.ndarray  # (C, d) float64
    sizes: np.ndarray  # (C,) int64
    n_iter: int = 0
    inertia_history: tuple[float, ...] = field(default=())

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    @classmethod
    def from_labels(cls, data, labels, n_clusters: int | None = None) -> "ClusterAssignment":
        """Assignment with centroids recomputed as member means."""
        labels = np.asarray(labels, dtype=np.int64).copy()
        if n_clusters is None:
            n_clusters = int(labels.max()) + 1
        return _finish(_as_matrix(data), labels, n_clusters)

    def members(self, r: int) -> np.ndarray:
        """Point ids of cluster ``r`` in ascending order."""
        return np.flatnonzero(self.assignment == r)

    def member_lists(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.cumsum(self.sizes)[:-1]
        return np.split(order, bounds)


@dataclass(frozen=True)
class KnnGraph:
    neighbors: np.ndarray  # (n, k) int64, padded with -1
    distances: np.ndarray  # (n, k) float64, padded with +inf
    counts: np.ndarray  # (n,) int64

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    def neighbors_of(self, i: int) -> np.ndarray:
        return self.neighbors[i, : self.counts[i]]

    def distances_of(self, i: int) -> np.ndarray:
        return self.distances[i, : self.counts[i]]

    def edges(self):
        """Yield ``(src, dst, squared_distance)`` for every edge."""
        for i in range(self.n):
            for t in range(self.counts[i]):
                yield i, int(self.neighbors[i, t]), float(self.distances[i, t])


def _as_matrix(data) -> np.ndarray:
    return np.asarray(getattr(data, "data", data), dtype=np.float64)


def default_n_clusters(n: int, workers: int = 1) -> int:
    """``ceil(n / 4096)`` clamped to ``[workers, n]``."""
    return int(min(max(math.ceil(n / 4096), workers), n))


def sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of ``x`` and ``c``."""
    d = (x * x).sum(1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _nearest(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.empty(x.shape[0], dtype=np.int64)
    best = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], _CHUNK):
        d = sq_dists(x[lo : lo + _CHUNK], centroids)
        labels[lo : lo + _CHUNK] = d.argmin(1)  # first minimum -> lowest id
        best[lo : lo + _CHUNK] = d[np.arange(d.shape[0]), labels[lo : lo + _CHUNK]]
    return labels, best


def _means(x: np.ndarray, labels: np.ndarray, n_clusters: int, old: np.ndarray) -> np.ndarray:
    sizes = np.bincount(labels, minlength=n_clusters)
    sums = np.zeros((n_clusters, x.shape[1]))
    np.add.at(sums, labels, x)
    out = old.copy()
    nz = sizes > 0
    out[nz] = sums[nz] / sizes[nz, None]
    return out


def _repair_empty(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Refill empty clusters with the farthest point of the largest cluster."""
    n_clusters = centroids.shape[0]
    labels = labels.copy()
    sizes = np.bincount(labels, minlength=n_clusters)
    for r in np.flatnonzero(sizes == 0):
        big = int(np.argmax(sizes))  # lowest id among the largest
        idx = np.flatnonzero(labels == big)
        centre = x[idx].mean(0)
        d = ((x[idx] - centre) ** 2).sum(1)
        far = int(idx[np.argmax(d)])
        labels[far] = r
        sizes[big] -= 1
        sizes[r] += 1
    return labels


def _finish(x, labels, n_clusters, n_iter=0, history=()):
    sizes = np.bincount(labels, minlength=n_clusters).astype(np.int64)
    centroids = _means(x, labels, n_clusters, np.zeros((n_clusters, x.shape[1])))
    for arr in (labels, centroids, sizes):
        arr.setflags(write=False)
    return ClusterAssignment(labels, centroids, sizes, n_iter, tuple(history))


def lsh_init(data, n_clusters: int, seed: int = 0) -> ClusterAssignment:
    """Seed ``n_clusters`` centroids from sign-random-projection buckets.

    ``ceil(log2(4 C))`` Gaussian hyperplanes through the data mean hash
    every point; the means of the ``C`` most populous buckets become the
    initial centroids. If there are fewer than ``C`` non-empty buckets the
    largest ones are split by perturbing copies of their centroid.
    """
    x = _as_matrix(data)
    n = x.shape[0]
    if not 2 <= n_clusters <= n:
        raise ParameterError(f"n_clusters must be in [2, {n}], got {n_clusters}")
    rng = np.random.default_rng(seed)
    n_planes = math.ceil(math.log2(4 * n_clusters))
    planes = rng.standard_normal((x.shape[1], n_planes))
    bits = ((x - x.mean(0)) @ planes) > 0
    codes = bits.astype(np.int64) @ (1 << np.arange(n_planes, dtype=np.int64))
    uniq, inverse, counts = np.unique(codes, return_inverse=True, return_counts=True)
    # most populous first, ties by smaller code
    order = np.lexsort((uniq, -counts))
    take = order[:n_clusters]
    centroids = _means(x, inverse.ravel(), len(uniq), np.zeros((len(uniq), x.shape[1])))[take]
    weights = counts[take].astype(np.float64)

    if len(centroids) < n_clusters:
        scale = float(x.std(0).mean()) or 1.0
        centroids = list(centroids)
        weights = list(weights)
        while len(centroids) < n_clusters:
            big = int(np.argmax(weights))
            weights[big] /= 2.0
            jitter = 1e-3 * scale * rng.standard_normal(x.shape[1])
            centroids.append(centroids[big] + jitter)
            weights.append(weights[big])
        centroids = np.array(centroids)

    labels, _ = _nearest(x, centroids)
    labels = _repair_empty(x, labels, centroids)
    return _finish(x, labels, n_clusters)


def kmeans_em(
    data,
    init: ClusterAssignment,
    max_iters: int = 100,
    tol: float | None = None,
) -> ClusterAssignment:
    """Lloyd iterations starting from ``init``.

    Stops when no label changes, when the largest squared centroid shift
    drops below ``tol`` (default ``1e-6`` times the mean squared row norm),
    or after ``max_iters`` rounds. ``inertia_history`` holds the mean squared
    distance to the assigned centroid after each round.
    """
    x = _as_matrix(data)
    if init.assignment.shape != (x.shape[0],):
        raise ValidationError("initial assignment does not match the data")
    n_clusters = init.n_clusters
    if tol is None:
        tol = 1e-6 * float((x * x).sum(1).mean())
    labels = np.asarray(init.assignment, dtype=np.int64).copy()
    centroids = _means(x, labels, n_clusters, np.asarray(init.centroids, dtype=np.float64))
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        new_labels, _ = _nearest(x, centroids)
        new_labels = _repair_empty(x, new_labels, centroids)
        new_centroids = _means(x, new_labels, n_clusters, centroids)
        err = ((x - new_centroids[new_labels]) ** 2).sum(1).mean()
        history.append(float(err))
        changed = not np.array_equal(new_labels, labels)
        shift = float(((new_centroids - centroids) ** 2).sum(1).max())
        labels, centroids = new_labels, new_centroids
        if not changed or shift < tol:
            break
    return _finish(x, labels, n_clusters, it, history)


def build_index(data, n_clusters: int, seed: int = 0, max_iters: int = 100, tol=None):
    """LSH seeding followed by Lloyd refinement."""
    return kmeans_em(data, lsh_init(data, n_clusters, seed), max_iters, tol)


def build_knn(data, clusters: ClusterAssignment, k: int) -> KnnGraph:
    """Exact k nearest same-cluster neighbours; ties go to the lower id."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    x = _as_matrix(data)
    n = x.shape[0]
    nbrs = np.full((n, k), -1, dtype=np.int64)
    dists = np.full((n, k), np.inf)
    counts = np.zeros(n, dtype=np.int64)
    for members in clusters.member_lists():
        m = len(members)
        kk = min(k, m - 1)
        if kk <= 0:
            continue
        pts = x[members]
        for lo in range(0, m, 1024):
            block = cdist(pts[lo : lo + 1024], pts, "sqeuclidean")
            rows = np.arange(block.shape[0])
            block[rows, rows + lo] = np.inf
            # members are ascending, so a stable sort breaks ties by lower id
            if kk < m - 1:
                part = np.argpartition(block, kk - 1, axis=1)[:, :kk]
                kth = block[rows[:, None], part].max(1)
                for r in range(block.shape[0]):
                    cand = np.flatnonzero(block[r] <= kth[r])
                    cand = cand[np.argsort(block[r, cand], kind="stable")][:kk]
                    nbrs[members[lo + r], :kk] = members[cand]
                    dists[members[lo + r], :kk] = block[r, cand]
            else:
                order = np.argsort(block, axis=1, kind="stable")[:, :kk]
                nbrs[members[lo : lo + 1024], :kk] = members[order]
                dists[members[lo : lo + 1024], :kk] = block[rows[:, None], order]
        counts[members] = kk
    for arr in (nbrs, dists, counts):
        arr.setflags(write=False)
    return KnnGraph(nbrs, dists, counts)


def dump_index(clusters: ClusterAssignment, graph: KnnGraph, out_dir: str | os.PathLike) -> tuple[str, str]:
    """Write ``clusters.csv`` (point_id,cluster_id) and ``edges.csv`` (src,dst,distance)."""
    os.makedirs(out_dir, exist_ok=True)
    cpath = os.path.join(out_dir, "clusters.csv")
    epath = os.path.join(out_dir, "edges.csv")
    with open(cpath, "w", encoding="utf-8") as fh:
        fh.write("point_id,cluster_id\n")
        fh.writelines(f"{i},{c}\n" for i, c in enumerate(clusters.assignment.tolist()))
    with open(epath, "w", encoding="utf-8") as fh:
        fh.write("src,dst,distance\n")
        fh.writelines(f"{s},{t},{format(d, '.17g')}\n" for s, t, d in graph.edges())
    return cpath, epath
