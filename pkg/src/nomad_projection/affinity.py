"""Explicit neighbour distribution and the head / noise samplers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ann_index import ClusterAssignment, KnnGraph
from .errors import ConfigurationError, ParameterError


def inverse_rank_weights(k: int) -> np.ndarray:
    """Weights ``exp(1/t) / sum_s exp(1/s)`` for ranks ``t = 1..k``."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    w = np.exp(1.0 / np.arange(1, k + 1, dtype=np.float64))
    return w / w.sum()


@dataclass(frozen=True)
class ConditionalAffinity:
    """Padded per-head neighbour ids and their probabilities ``p(j|i)``."""

    neighbors: np.ndarray  # (n, k) int64, -1 padded
    weights: np.ndarray  # (n, k) float64, 0 padded
    counts: np.ndarray  # (n,)

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]

    def heads(self) -> np.ndarray:
        """Ids of points with at least one neighbour."""
        return np.flatnonzero(self.counts > 0)

    def of(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        c = self.counts[i]
        return self.neighbors[i, :c], self.weights[i, :c]


def build_affinity(graph: KnnGraph) -> ConditionalAffinity:
    weights = np.zeros(graph.neighbors.shape)
    table = {}
    for i, c in enumerate(graph.counts.tolist()):
        if c == 0:
            continue
        if c not in table:
            table[c] = inverse_rank_weights(c)
        weights[i, :c] = table[c]
    weights.setflags(write=False)
    return ConditionalAffinity(graph.neighbors, weights, graph.counts)


@dataclass(frozen=True)
class NoiseModel:
    cell_probs: np.ndarray
    negatives_per_head: int

    def __post_init__(self):
        if self.negatives_per_head < 1:
            raise ParameterError("need at least one negative per head")

    @classmethod
    def from_clusters(cls, clusters: ClusterAssignment, negatives_per_head: int) -> "NoiseModel":
        sizes = np.asarray(clusters.sizes, dtype=np.float64)
        return cls(sizes / sizes.sum(), negatives_per_head)


def sample_heads(eligible, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform draws from ``eligible`` (points that have neighbours)."""
    eligible = np.asarray(eligible)
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    if eligible.size == 0:
        raise ConfigurationError("no point has any neighbour; nothing to train on")
    return eligible[rng.integers(0, eligible.size, size=batch_size)]


def sample_noise_tails(eligible, count, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform draws from ``eligible``; ``count`` may be an int or a shape."""
    eligible = np.asarray(eligible)
    if eligible.size == 0:
        raise ParameterError("noise tails need a non-empty eligible set")
    return eligible[rng.integers(0, eligible.size, size=count)]
