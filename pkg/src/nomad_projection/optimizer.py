"""Sharded SGD training loop.

Clusters of the ANN index are dealt out to ``W`` workers. During an epoch a
worker only reads and writes the positions of its own points; the other
workers' clusters are seen solely through the cluster means gathered at the
end of the previous epoch. After every epoch each worker publishes the means
of its own clusters and all workers receive the combined table. No point
coordinates ever cross a worker boundary.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .affinity import ConditionalAffinity, build_affinity, sample_heads, sample_noise_tails
from .ann_index import (
    ClusterAssignment,
    KnnGraph,
    build_knn,
    default_n_clusters,
    kmeans_em,
    lsh_init,
)
from .errors import (
    ConsistencyError,
    DegenerateInputError,
    DivergenceError,
    ParameterError,
)
from .objective import ClusterMeans, batch_loss_and_grad
from .vector_io import LayoutMatrix, save_layout

log = logging.getLogger(__name__)

APPROXIMATE_MODES = ("remote", "all-but-own")
UPDATE_MODES = ("all", "head-only")
DIVERGENCE_LIMIT = 1e9


@dataclass
class TrainConfig:
    epochs: int = 200
    k: int = 15
    n_negatives: int = 5
    local_draws: int = 5
    batch_size: int = 1024
    workers: int = 1
    n_clusters: int | None = None  # None -> ceil(n / 4096) clamped to [workers, n]
    seed: int = 0
    lr0: float | None = None  # None -> n / 10
    approximate: str = "remote"
    update: str = "all"
    kmeans_max_iters: int = 100
    kmeans_tol: float | None = None
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def validate(self, n: int | None = None) -> None:
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if self.n_negatives < 1:
            raise ParameterError("negatives must be >= 1")
        if self.local_draws < 1:
            raise ParameterError("local draws must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch size must be >= 1")
        if self.n_clusters is not None:
            if self.n_clusters < 1:
                raise ParameterError("clusters must be >= 1")
            if self.n_clusters < self.workers:
                raise ParameterError("clusters must be ≥ workers")
        if self.lr0 is not None and not (self.lr0 >= 0 and math.isfinite(self.lr0)):
            raise ParameterError("lr0 must be finite and non-negative")
        if self.approximate not in APPROXIMATE_MODES:
            raise ParameterError(f"approximate must be one of {APPROXIMATE_MODES}")
        if self.update not in UPDATE_MODES:
            raise ParameterError(f"update must be one of {UPDATE_MODES}")
        if self.checkpoint_every < 0:
            raise ParameterError("checkpoint_every must be >= 0")
        if n is not None:
            if n < 2:
                raise ParameterError("need at least 2 points")
            if self.workers > n:
                raise ParameterError("more workers than points")
            if self.n_clusters is not None and self.n_clusters > n:
                raise ParameterError("more clusters than points")

    def resolved_clusters(self, n: int) -> int:
        if self.n_clusters is not None:
            return self.n_clusters
        return default_n_clusters(n, self.workers)


# --------------------------------------------------------------------------
# initialisation and schedule


def pca_init(data, seed: int = 0) -> LayoutMatrix:
    """Top-two principal component scores, each scaled to unit variance.

    Each component's sign is fixed so its largest-magnitude loading is
    positive. If the second eigenvalue is below ``1e-12`` of the first, a
    seeded uniform jitter in ``[-1e-4, 1e-4]`` is added to the second
    coordinate instead of failing.
    """
    x = np.asarray(getattr(data, "data", data), dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise DegenerateInputError("need at least 2 points")
    xc = x - x.mean(0)
    if n >= d:
        evals, evecs = np.linalg.eigh(xc.T @ xc / n)
        order = np.argsort(evals)[::-1][:2]
        evals, comps = evals[order], evecs[:, order]
    else:
        gvals, gvecs = np.linalg.eigh(xc @ xc.T / n)
        order = np.argsort(gvals)[::-1][:2]
        evals = gvals[order]
        comps = xc.T @ gvecs[:, order]
        norms = np.linalg.norm(comps, axis=0)
        comps = comps / np.where(norms > 0, norms, 1.0)
    if evals.size < 2:
        evals = np.append(evals, 0.0)
        comps = np.column_stack([comps, np.zeros(d)])
    if not evals[0] > 0:
        raise DegenerateInputError("data has zero variance")
    for c in range(2):
        col = comps[:, c]
        if col[np.argmax(np.abs(col))] < 0:
            comps[:, c] = -col
    y = xc @ comps
    if evals[1] < 1e-12 * evals[0]:
        rng = np.random.default_rng(seed)
        y[:, 1] += rng.uniform(-1e-4, 1e-4, size=n)
    y /= y.std(0)
    return LayoutMatrix(y, epoch=0)


def lr_schedule(epoch: int, total_epochs: int, lr0: float) -> float:
    """``lr0 * (1 - epoch / total_epochs)``."""
    if not 0 <= epoch < total_epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {total_epochs})")
    return lr0 * (1.0 - epoch / total_epochs)


def worker_rng(seed: int, worker: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, worker]))


# --------------------------------------------------------------------------
# sharding and the means exchange


@dataclass(frozen=True)
class ShardPlan:
    cluster_to_worker: np.ndarray
    worker_points: list[np.ndarray]
    worker_counts: np.ndarray

    @property
    def workers(self) -> int:
        return len(self.worker_points)

    def clusters_of(self, w: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_to_worker == w)


def shard_clusters(assignment: ClusterAssignment, workers: int) -> ShardPlan:
    """Longest-processing-time greedy: biggest cluster to the lightest worker."""
    sizes = np.asarray(assignment.sizes)
    n_clusters = len(sizes)
    if workers < 1:
        raise ParameterError("workers must be >= 1")
    if n_clusters < workers:
        raise ParameterError(f"clusters must be >= workers ({n_clusters} < {workers})")
    load = np.zeros(workers, dtype=np.int64)
    owner = np.empty(n_clusters, dtype=np.int64)
    for r in sorted(range(n_clusters), key=lambda c: (-sizes[c], c)):
        w = int(np.argmin(load))
        owner[r] = w
        load[w] += sizes[r]
    point_owner = owner[assignment.assignment]
    points = [np.flatnonzero(point_owner == w) for w in range(workers)]
    return ShardPlan(owner, points, load)


def cluster_means(positions: np.ndarray, assignment: ClusterAssignment, epoch: int = 0) -> ClusterMeans:
    """Per-cluster means computed from a complete layout (no sharding)."""
    pos = np.asarray(getattr(positions, "positions", positions), dtype=np.float64)
    means = np.zeros((assignment.n_clusters, 2))
    for r, members in enumerate(assignment.member_lists()):
        means[r] = pos[members].mean(0)
    return ClusterMeans(means, np.asarray(assignment.sizes).copy(), epoch)


class MeansExchange:
    """In-process all-gather of :class:`ClusterMeans` tables.

    Only ``ClusterMeans`` objects are accepted; every message is logged as
    ``(epoch, worker, kind, floats)`` so tests can audit the traffic.
    """

    def __init__(self):
        self.log: list[tuple[int, int, str, int]] = []

    def all_gather(self, epoch: int, messages: list[ClusterMeans]) -> ClusterMeans:
        for w, msg in enumerate(messages):
            if not isinstance(msg, ClusterMeans):
                raise ConsistencyError(f"worker {w} tried to send {type(msg).__name__}")
            self.log.append((epoch, w, type(msg).__name__, msg.means.size + msg.counts.size))
        return gather_means(messages, epoch)

    def messages_in(self, epoch: int) -> list[tuple[int, int, str, int]]:
        return [m for m in self.log if m[0] == epoch]


def gather_means(parts: list[ClusterMeans], epoch: int | None = None) -> ClusterMeans:
    """Combine per-worker partial tables; each cluster must have exactly one owner."""
    if not parts:
        raise ConsistencyError("nothing to gather")
    owners = np.stack([np.asarray(p.counts) > 0 for p in parts])
    per_cluster = owners.sum(0)
    if np.any(per_cluster != 1):
        bad = int(np.flatnonzero(per_cluster != 1)[0])
        raise ConsistencyError(f"cluster {bad} reported by {per_cluster[bad]} workers")
    means = np.zeros_like(np.asarray(parts[0].means, dtype=np.float64))
    counts = np.zeros_like(np.asarray(parts[0].counts))
    for p, own in zip(parts, owners):
        means[own] = p.means[own]
        counts[own] = p.counts[own]
    stamp = parts[0].epoch_stamp if epoch is None else epoch
    return ClusterMeans(means, counts, stamp)


def gather_layout_means(worker_layouts, plan: ShardPlan, assignment: ClusterAssignment, epoch: int = 0) -> ClusterMeans:
    """Means from per-worker position blocks (``worker_layouts[w]`` rows follow ``plan.worker_points[w]``)."""
    seen = np.zeros(len(assignment.assignment), dtype=np.int64)
    for pts in plan.worker_points:
        seen[pts] += 1
    if np.any(seen != 1) or len(worker_layouts) != plan.workers:
        raise ConsistencyError("worker layouts do not cover every point exactly once")
    parts = []
    for w, pos in enumerate(worker_layouts):
        labels = assignment.assignment[plan.worker_points[w]]
        parts.append(_partial_means(np.asarray(pos), labels, plan.clusters_of(w), assignment.n_clusters, epoch))
    return gather_means(parts, epoch)


def _partial_means(pos, labels, own, n_clusters, epoch) -> ClusterMeans:
    means = np.zeros((n_clusters, 2))
    counts = np.zeros(n_clusters, dtype=np.int64)
    for r in own:
        idx = np.flatnonzero(labels == r)
        means[r] = pos[idx].mean(0)
        counts[r] = idx.size
    return ClusterMeans(means, counts, epoch)


# --------------------------------------------------------------------------
# per-worker training


@dataclass
class WorkerState:
    worker: int
    points: np.ndarray  # global ids, ascending
    positions: np.ndarray  # (n_local, 2), exclusively owned
    nbrs: np.ndarray  # (n_local, k) local indices; padding points at self
    weights: np.ndarray  # (n_local, k)
    heads: np.ndarray  # local indices with >= 1 neighbour
    labels: np.ndarray  # cluster id of each local point
    own_clusters: np.ndarray
    cluster_probs: np.ndarray  # p(m in r) for every cluster
    cluster_sizes: np.ndarray
    n_total: int
    rng: np.random.Generator
    # all-but-own mode: local members grouped by cluster
    member_table: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    member_start: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def local_means(self, epoch: int) -> ClusterMeans:
        return _partial_means(self.positions, self.labels, self.own_clusters, len(self.cluster_probs), epoch)


def make_worker(
    w: int,
    plan: ShardPlan,
    assignment: ClusterAssignment,
    affinity: ConditionalAffinity,
    init: np.ndarray,
    seed: int,
) -> WorkerState:
    pts = plan.worker_points[w]
    n = len(assignment.assignment)
    to_local = np.full(n, -1, dtype=np.int64)
    to_local[pts] = np.arange(len(pts))
    raw = affinity.neighbors[pts]
    self_idx = np.arange(len(pts))[:, None]
    nbrs = np.where(raw >= 0, to_local[np.maximum(raw, 0)], self_idx)
    if np.any(nbrs < 0):
        raise ConsistencyError(f"worker {w} has a neighbour outside its shard")
    labels = np.asarray(assignment.assignment)[pts]
    sizes = np.asarray(assignment.sizes)
    order = np.argsort(labels, kind="stable")
    start = np.zeros(assignment.n_clusters + 1, dtype=np.int64)
    np.cumsum(np.bincount(labels, minlength=assignment.n_clusters), out=start[1:])
    return WorkerState(
        worker=w,
        points=pts,
        positions=np.array(init[pts], dtype=np.float64),
        nbrs=nbrs,
        weights=np.asarray(affinity.weights[pts]),
        heads=np.flatnonzero(affinity.counts[pts] > 0),
        labels=labels,
        own_clusters=plan.clusters_of(w),
        cluster_probs=sizes / n,
        cluster_sizes=sizes,
        n_total=n,
        rng=worker_rng(seed, w),
        member_table=order,
        member_start=start,
    )


def train_epoch(
    state: WorkerState,
    means: ClusterMeans,
    lr: float,
    config: TrainConfig,
    epoch: int = 0,
) -> tuple[float, ClusterMeans]:
    """One pass of ``len(state.heads)`` sampled heads over the worker's shard.

    Every batch takes an SGD step of size ``lr`` on the batch-mean surrogate
    loss. Returns the mean per-head loss and the fresh local means.
    """
    if state.heads.size == 0:
        return 0.0, state.local_means(epoch)
    pos = state.positions
    n_local = pos.shape[0]
    s = config.local_draws
    all_local = np.arange(n_local)
    own = np.zeros(len(state.cluster_probs), dtype=bool)
    own[state.own_clusters] = True
    mu_all = np.asarray(means.means, dtype=np.float64)

    if config.approximate == "remote":
        remote = np.flatnonzero(~own)
        mu = mu_all[remote]
        probs = state.cluster_probs[remote]
        local_mass = int(state.cluster_sizes[own].sum()) / state.n_total

    total_loss = 0.0
    n_heads = state.heads.size
    for lo in range(0, n_heads, config.batch_size):
        size = min(config.batch_size, n_heads - lo)
        heads = sample_heads(state.heads, size, state.rng)
        if config.approximate == "remote":
            negs = sample_noise_tails(all_local, (size, s), state.rng)
            batch_mu, batch_probs, batch_mass = mu, probs, local_mass
        else:
            cl = state.labels[heads]
            offs = state.rng.integers(0, state.cluster_sizes[cl][:, None], size=(size, s))
            negs = state.member_table[state.member_start[cl][:, None] + offs]
            batch_mu = mu_all
            batch_probs = np.broadcast_to(state.cluster_probs, (size, len(state.cluster_probs))).copy()
            batch_probs[np.arange(size), cl] = 0.0
            batch_mass = state.cluster_sizes[cl] / state.n_total
        loss = sgd_step(
            pos, heads, state.nbrs[heads], state.weights[heads], negs,
            batch_mu, batch_probs, config.n_negatives, batch_mass, lr, config.update == "head-only",
        )
        total_loss += float(loss.sum())
        _check_finite(pos, heads, state, epoch)
    return total_loss / n_heads, state.local_means(epoch)


def sgd_step(pos, heads, nbrs, weights, negs, mu, probs, n_negatives, local_mass, lr, heads_only=False):
    """In-place SGD step of size ``lr`` on the batch-mean surrogate loss; returns per-head losses."""
    loss, g_head, g_nbr, g_neg = batch_loss_and_grad(
        pos, heads, nbrs, weights, negs, mu, probs, n_negatives, local_mass
    )
    step = lr / heads.size
    np.add.at(pos, heads, -step * g_head)
    if not heads_only:
        np.add.at(pos, nbrs, -step * g_nbr)
        np.add.at(pos, negs, -step * g_neg)
    return loss


def _check_finite(pos, heads, state: WorkerState, epoch: int) -> None:
    peak = np.abs(pos).max()
    if np.isfinite(peak) and peak <= DIVERGENCE_LIMIT:
        return
    bad_rows = ~np.isfinite(pos[heads]).all(1) | (np.abs(pos[heads]) > DIVERGENCE_LIMIT).any(1)
    head = int(state.points[heads[np.argmax(bad_rows)]])
    raise DivergenceError(
        f"positions diverged in epoch {epoch} (head {head}, |coord| = {peak:.3g})",
        epoch=epoch,
        head=head,
    )


# --------------------------------------------------------------------------
# pipeline


@dataclass
class FitResult:
    layout: LayoutMatrix
    clusters: ClusterAssignment
    graph: KnnGraph
    affinity: ConditionalAffinity
    plan: ShardPlan
    init: LayoutMatrix
    exchange: MeansExchange
    losses: list[float]
    means: ClusterMeans


def build_clusters(data, config: TrainConfig) -> ClusterAssignment:
    x = np.asarray(getattr(data, "data", data), dtype=np.float64)
    n_clusters = config.resolved_clusters(x.shape[0])
    if n_clusters == 1:
        labels = np.zeros(x.shape[0], dtype=np.int64)
        return ClusterAssignment(labels, x.mean(0, keepdims=True), np.array([x.shape[0]]), 0, ())
    init = lsh_init(x, n_clusters, config.seed)
    return kmeans_em(x, init, config.kmeans_max_iters, config.kmeans_tol)


def run(data, config: TrainConfig | None = None, exchange: MeansExchange | None = None) -> FitResult:
    """Index, initialise and train; returns the layout plus every intermediate."""
    config = config or TrainConfig()
    x = np.asarray(getattr(data, "data", data), dtype=np.float64)
    n = x.shape[0]
    config.validate(n)
    if config.resolved_clusters(n) < config.workers:
        raise ParameterError("clusters must be ≥ workers")
    exchange = exchange or MeansExchange()

    clusters = build_clusters(x, config)
    graph = build_knn(x, clusters, config.k)
    affinity = build_affinity(graph)
    init = pca_init(x, config.seed)
    plan = shard_clusters(clusters, config.workers)
    lr0 = n / 10.0 if config.lr0 is None else config.lr0

    workers = [make_worker(w, plan, clusters, affinity, init.positions, config.seed) for w in range(plan.workers)]
    means = cluster_means(init.positions, clusters, epoch=0)
    losses: list[float] = []
    pool = ThreadPoolExecutor(max_workers=plan.workers) if plan.workers > 1 else None
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            lr = lr_schedule(epoch, config.epochs, lr0)
            snapshot = means
            if pool is None:
                results = [train_epoch(workers[0], snapshot, lr, config, epoch)]
            else:
                futures = [pool.submit(train_epoch, st, snapshot, lr, config, epoch) for st in workers]
                results = [f.result() for f in futures]  # barrier
            means = exchange.all_gather(epoch, [part for _, part in results])
            heads = sum(st.heads.size for st in workers)
            loss = sum(l * st.heads.size for (l, _), st in zip(results, workers)) / max(heads, 1)
            losses.append(loss)
            log.info(
                "epoch %d lr %.6g loss %.6f time %.3fs", epoch, lr, loss, time.perf_counter() - t0
            )
            if config.checkpoint_every and config.checkpoint_path and (epoch + 1) % config.checkpoint_every == 0:
                ckpt = _assemble(workers, n, epoch + 1)
                save_layout(ckpt, [str(i) for i in range(n)], config.checkpoint_path.format(epoch=epoch + 1))
    finally:
        if pool is not None:
            pool.shutdown()

    layout = _assemble(workers, n, config.epochs)
    return FitResult(layout, clusters, graph, affinity, plan, init, exchange, losses, means)


def _assemble(workers: list[WorkerState], n: int, epoch: int) -> LayoutMatrix:
    out = np.empty((n, 2))
    written = np.zeros(n, dtype=np.int64)
    for st in workers:
        out[st.points] = st.positions
        written[st.points] += 1
    if np.any(written != 1):
        raise ConsistencyError("a position was owned by zero or several workers")
    return LayoutMatrix(out, epoch=epoch)


def fit(data, config: TrainConfig | None = None) -> LayoutMatrix:
    return run(data, config).layout
