"""Synthetic Gaussian-mixture fixtures."""

from __future__ import annotations

import numpy as np

from .vector_io import VectorDataset


def gaussian_blobs(
    n: int,
    d: int,
    n_blobs: int,
    seed: int = 0,
    center_scale: float = 10.0,
    spread: float = 1.0,
    latent_dim: int | None = None,
    decay: float | None = None,
) -> VectorDataset:
    """``n`` points from ``n_blobs`` Gaussian components in ``d`` dimensions.

    Centres are ``center_scale`` times standard normal vectors. If
    ``latent_dim`` is given they are drawn in a random ``latent_dim``
    dimensional subspace instead of the full space. With ``decay`` each
    component gets a random rotation and per-axis scales
    ``spread * decay**t`` (t = 0..d-1); otherwise it is isotropic with
    standard deviation ``spread``. Labels are the component index.
    """
    rng = np.random.default_rng(seed)
    if latent_dim is None:
        centers = center_scale * rng.standard_normal((n_blobs, d))
    else:
        basis, _ = np.linalg.qr(rng.standard_normal((d, latent_dim)))
        centers = center_scale * rng.standard_normal((n_blobs, latent_dim)) @ basis.T
    labels = np.sort(rng.integers(0, n_blobs, size=n))
    x = np.empty((n, d))
    for b in range(n_blobs):
        idx = np.flatnonzero(labels == b)
        z = rng.standard_normal((idx.size, d))
        if decay is None:
            z *= spread
        else:
            rot, _ = np.linalg.qr(rng.standard_normal((d, d)))
            z = (z * (spread * decay ** np.arange(d))) @ rot.T
        x[idx] = centers[b] + z
    return VectorDataset(x.astype(np.float32), labels=[str(v) for v in labels])
