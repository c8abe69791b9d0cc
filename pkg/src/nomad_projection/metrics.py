"""Layout quality metrics: neighbourhood preservation and random triplet accuracy."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ann_index import KnnGraph, sq_dists
from .errors import DimensionError, ParameterError

_CHUNK = 1024


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: float
    stderr: float = 0.0
    params: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ParameterError(f"metric value {self.value} outside [0, 1]")
        if self.stderr < 0:
            raise ParameterError("standard error must be non-negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)


def _matrix(obj) -> np.ndarray:
    obj = getattr(obj, "data", obj)
    obj = getattr(obj, "positions", obj)
    return np.asarray(obj, dtype=np.float64)


def knn_indices(x: np.ndarray, k: int, rows: np.ndarray | None = None) -> np.ndarray:
    """Exact k nearest neighbours (self excluded) of ``rows`` among all of ``x``."""
    rows = np.arange(x.shape[0]) if rows is None else np.asarray(rows)
    out = np.empty((rows.size, k), dtype=np.int64)
    for lo in range(0, rows.size, _CHUNK):
        idx = rows[lo : lo + _CHUNK]
        d = sq_dists(x[idx], x)
        d[np.arange(idx.size), idx] = np.inf
        out[lo : lo + _CHUNK] = np.argpartition(d, k - 1, axis=1)[:, :k]
    return out


def _row_overlap(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    # broadcasting compare is cheap for the small k used here
    return (a[:, :, None] == b[:, None, :]).any(2).sum(1) / k


def neighborhood_preservation(
    high,
    low,
    k: int = 10,
    sample: int | None = None,
    seed: int = 0,
    graph: KnnGraph | None = None,
) -> MetricReport:
    """Mean ``|kNN_high(i) & kNN_low(i)| / k``.

    With ``sample=h`` only ``h`` uniformly chosen points (without
    replacement) are evaluated and the standard error of the mean is
    reported. Passing ``graph`` reuses an ANN graph for the high-dimensional
    side; the report is then named ``NP@k-ann``.
    """
    x, y = _matrix(high), _matrix(low)
    n = x.shape[0]
    if y.shape[0] != n:
        raise DimensionError(f"{n} vectors but {y.shape[0]} layout rows")
    if not 1 <= k < n:
        raise ParameterError(f"k must be in [1, {n - 1}], got {k}")
    if sample is None or sample >= n:
        rows = np.arange(n)
    else:
        if sample < 1:
            raise ParameterError("sample must be >= 1")
        rows = np.sort(np.random.default_rng(seed).choice(n, size=sample, replace=False))
    if graph is not None:
        if graph.k < k:
            raise ParameterError(f"graph has only {graph.k} neighbours per point")
        hi = graph.neighbors[rows, :k]
        name = f"NP@{k}-ann"
    else:
        hi = knn_indices(x, k, rows)
        name = f"NP@{k}"
    lo = knn_indices(y, k, rows)
    per_point = _row_overlap(hi, lo, k)
    value = float(per_point.mean())
    stderr = 0.0
    if rows.size < n and rows.size > 1:
        stderr = float(per_point.std(ddof=1) / math.sqrt(rows.size))
    params = {"k": k, "points": int(rows.size)}
    return MetricReport(name, min(max(value, 0.0), 1.0), stderr, params, seed if rows.size < n else None)


def sample_triplets(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` i.i.d. triplets of three distinct indices."""
    t = rng.integers(0, n, size=(count, 3))
    while True:
        bad = (t[:, 0] == t[:, 1]) | (t[:, 0] == t[:, 2]) | (t[:, 1] == t[:, 2])
        if not bad.any():
            return t
        t[bad] = rng.integers(0, n, size=(int(bad.sum()), 3))


def triplet_agreement(x: np.ndarray, y: np.ndarray, triplets: np.ndarray) -> np.ndarray:
    """Per triplet: does ``d(a,b)`` vs ``d(a,c)`` order the same way in both spaces?"""
    a, b, c = triplets.T

    def order(m):
        dab = ((m[a] - m[b]) ** 2).sum(1)
        dac = ((m[a] - m[c]) ** 2).sum(1)
        return np.sign(dab - dac)

    return order(x) == order(y)


def random_triplet_accuracy(high, low, n_triplets: int = 100_000, seed: int = 0) -> MetricReport:
    x, y = _matrix(high), _matrix(low)
    n = x.shape[0]
    if y.shape[0] != n:
        raise DimensionError(f"{n} vectors but {y.shape[0]} layout rows")
    if n < 3:
        raise ParameterError("need at least 3 points")
    if n_triplets < 1:
        raise ParameterError("need at least one triplet")
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_triplets:
        m = min(1_000_000, n_triplets - done)
        hits += int(triplet_agreement(x, y, sample_triplets(n, m, rng)).sum())
        done += m
    p = hits / n_triplets
    stderr = math.sqrt(p * (1 - p) / n_triplets)
    return MetricReport("triplet", p, stderr, {"triplets": n_triplets}, seed)
