"""Cauchy-kernel contrastive losses and their gradients.

Two losses live here:

* ``infonce_loss``: the plain per-sample contrastive loss, one positive
  edge against an explicit list of noise tails.
* ``nomad_loss``: the surrogate used for training. Noise cells listed as
  *remote* are represented only by their low-dimensional mean; the
  remaining (local) mass is estimated from uniformly drawn local tails.

The batched kernel ``batch_loss_and_grad`` is what the optimiser calls; the
single-head functions wrap it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SizeError, ValidationError

MAX_ENUMERATION = 10**7


@dataclass(frozen=True)
class ClusterMeans:
    means: np.ndarray  # (C, 2)
    counts: np.ndarray  # (C,)
    epoch_stamp: int = 0


@dataclass(frozen=True)
class LossBatchSpec:
    """Everything needed to evaluate the surrogate loss for one head.

    ``remote_cells`` index rows of a :class:`ClusterMeans`; ``remote_probs``
    are their noise masses ``p(m in r)``. ``local_mass`` is the noise mass of
    all other cells, which ``negatives`` (drawn uniformly from local points)
    stand in for.
    """

    head: int
    neighbors: np.ndarray
    weights: np.ndarray
    negatives: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    remote_cells: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    remote_probs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    local_mass: float = 1.0
    n_negatives: int = 1

    def check(self, n_points: int, n_clusters: int | None = None) -> None:
        ids = np.concatenate([[self.head], self.neighbors, self.negatives]).astype(np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= n_points):
            raise ValidationError("spec references a point outside the layout")
        if len(self.neighbors) != len(self.weights):
            raise ValidationError("neighbors and weights differ in length")
        if len(self.remote_cells) != len(self.remote_probs):
            raise ValidationError("remote_cells and remote_probs differ in length")
        if n_clusters is not None and len(self.remote_cells):
            if min(self.remote_cells) < 0 or max(self.remote_cells) >= n_clusters:
                raise ValidationError("spec references an unknown cluster")
        total = float(np.sum(self.remote_probs)) + self.local_mass
        if not math.isclose(total, 1.0, rel_tol=1e-9):
            raise ValidationError(f"noise masses sum to {total}, not 1")


def cauchy_kernel(a, b) -> float:
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return 1.0 / (1.0 + float(diff @ diff))


def _q(d2):
    return 1.0 / (1.0 + d2)


def infonce_loss(layout, i: int, j: int, negatives) -> float:
    """``-log(q(ij) / (q(ij) + sum_m q(im)))`` for one edge and one noise set."""
    pos = np.asarray(getattr(layout, "positions", layout), dtype=np.float64)
    if i == j:
        raise ValidationError("an edge needs distinct endpoints")
    qij = cauchy_kernel(pos[i], pos[j])
    neg = np.asarray(negatives, dtype=np.int64)
    noise = float(_q(((pos[i] - pos[neg]) ** 2).sum(1)).sum()) if neg.size else 0.0
    return -math.log(qij / (qij + noise))


def batch_loss_and_grad(
    pos: np.ndarray,
    heads: np.ndarray,
    nbrs: np.ndarray,
    weights: np.ndarray,
    negs: np.ndarray,
    means: np.ndarray,
    remote_probs: np.ndarray,
    n_negatives: int,
    local_mass: float,
    with_grad: bool = True,
):
    """Surrogate loss for a batch of heads and its partial derivatives.

    Shapes: ``heads (B,)``, ``nbrs``/``weights (B, k)`` (padding must carry
    zero weight and any valid id), ``negs (B, s)``, ``means (R, 2)``,
    ``remote_probs (R,)`` or per head ``(B, R)``. ``local_mass`` is a scalar
    or a per-head ``(B,)`` array.

    Returns ``loss (B,)`` and, if requested, ``g_head (B, 2)``,
    ``g_nbr (B, k, 2)``, ``g_neg (B, s, 2)``. Means are constants.
    """
    s = negs.shape[1]
    if s == 0 and np.any(np.asarray(local_mass) > 0):
        raise ConfigurationError("local noise mass is non-zero but no local negatives were drawn")
    ti = pos[heads]
    dj = ti[:, None, :] - pos[nbrs]
    qj = _q((dj * dj).sum(-1))

    dm = ti[:, None, :] - pos[negs]
    qm = _q((dm * dm).sum(-1))
    scale = np.asarray((n_negatives * local_mass) / s if s else 0.0 * local_mass)
    local_part = scale * qm.sum(1)

    du = ti[:, None, :] - means[None, :, :]
    qu = _q((du * du).sum(-1))
    remote_part = n_negatives * (qu * remote_probs).sum(1)

    noise = remote_part + local_part
    zj = qj + noise[:, None]
    loss = -(weights * (np.log(qj) - np.log(zj))).sum(1)
    if not with_grad:
        return loss

    attract = 2.0 * weights * noise[:, None] * qj / zj
    g_nbr = -attract[..., None] * dj
    pull = (weights / zj).sum(1)
    rep_remote = n_negatives * ((remote_probs * qu * qu)[..., None] * du).sum(1)
    two_scale = 2.0 * (scale if scale.ndim == 0 else scale[:, None])
    g_neg = (two_scale * (pull[:, None] * qm * qm))[..., None] * dm
    g_head = (attract[..., None] * dj).sum(1) - 2.0 * pull[:, None] * rep_remote - g_neg.sum(1)
    return loss, g_head, g_nbr, g_neg


def _spec_arrays(layout, spec: LossBatchSpec, means: ClusterMeans | None):
    pos = np.asarray(getattr(layout, "positions", layout), dtype=np.float64)
    nb = np.asarray(spec.neighbors, dtype=np.int64)[None, :]
    w = np.asarray(spec.weights, dtype=np.float64)[None, :]
    ng = np.asarray(spec.negatives, dtype=np.int64).reshape(1, -1)
    cells = np.asarray(spec.remote_cells, dtype=np.int64)
    if cells.size:
        if means is None:
            raise ConfigurationError("remote cells given without cluster means")
        mu = np.asarray(means.means, dtype=np.float64)[cells]
    else:
        mu = np.zeros((0, 2))
    probs = np.asarray(spec.remote_probs, dtype=np.float64)
    return pos, np.array([spec.head]), nb, w, ng, mu, probs


def nomad_loss(layout, spec: LossBatchSpec, means: ClusterMeans | None = None) -> float:
    pos, h, nb, w, ng, mu, probs = _spec_arrays(layout, spec, means)
    loss = batch_loss_and_grad(pos, h, nb, w, ng, mu, probs, spec.n_negatives, spec.local_mass, False)
    return float(loss[0])


def nomad_gradient(layout, spec: LossBatchSpec, means: ClusterMeans | None = None) -> dict[int, np.ndarray]:
    """Sparse gradient keyed by point id; repeated ids are accumulated."""
    pos, h, nb, w, ng, mu, probs = _spec_arrays(layout, spec, means)
    _, gh, gn, gm = batch_loss_and_grad(pos, h, nb, w, ng, mu, probs, spec.n_negatives, spec.local_mass)
    out: dict[int, np.ndarray] = {spec.head: gh[0].copy()}
    for ids, grads in ((nb[0], gn[0]), (ng[0], gm[0])):
        for idx, g in zip(ids.tolist(), grads):
            out[idx] = out.get(idx, np.zeros(2)) + g
    return out


def enumerate_infonce_expectation(layout, i: int, j: int, tails, n_negatives: int) -> float:
    """Exact ``E_M[log(q(ij) + sum_{m in M} q(im))]`` over uniform ``|M|``-tuples of ``tails``."""
    pos = np.asarray(getattr(layout, "positions", layout), dtype=np.float64)
    tails = np.asarray(tails, dtype=np.int64)
    if tails.size == 0:
        raise ValidationError("need at least one candidate tail")
    if tails.size**n_negatives > MAX_ENUMERATION:
        raise SizeError(f"{tails.size}^{n_negatives} tuples exceed {MAX_ENUMERATION}")
    qij = cauchy_kernel(pos[i], pos[j])
    q = _q(((pos[i] - pos[tails]) ** 2).sum(1))
    total = np.zeros(())
    for _ in range(n_negatives):
        total = np.add.outer(total, q)
    return float(np.log(qij + total).mean())


def mean_field_log_partition(layout, i: int, j: int, cells, n_negatives: int) -> float:
    """``log(q(ij) + |M| sum_r p(m in r) mean_{m in r} q(im))`` with ``p`` proportional to cell size."""
    pos = np.asarray(getattr(layout, "positions", layout), dtype=np.float64)
    cells = [np.asarray(c, dtype=np.int64) for c in cells]
    total = sum(len(c) for c in cells)
    qij = cauchy_kernel(pos[i], pos[j])
    acc = 0.0
    for c in cells:
        acc += (len(c) / total) * float(_q(((pos[i] - pos[c]) ** 2).sum(1)).mean())
    return math.log(qij + n_negatives * acc)


def taylor_gap(layout, i: int, cell) -> float:
    """``|mean_{m in cell} q(im) - q(i, mean of cell)|``."""
    pos = np.asarray(getattr(layout, "positions", layout), dtype=np.float64)
    cell = np.asarray(cell, dtype=np.int64)
    if cell.size == 0:
        raise ValidationError("cell must be non-empty")
    pts = pos[cell]
    exact = float(_q(((pos[i] - pts) ** 2).sum(1)).mean())
    return abs(exact - cauchy_kernel(pos[i], pts.mean(0)))


__all__ = [
    "ClusterMeans",
    "LossBatchSpec",
    "batch_loss_and_grad",
    "cauchy_kernel",
    "enumerate_infonce_expectation",
    "infonce_loss",
    "mean_field_log_partition",
    "nomad_gradient",
    "nomad_loss",
    "taylor_gap",
]
