"""Sharded contrastive data maps.

Typical use::

    from nomad_projection import TrainConfig, fit, load_vectors
    layout = fit(load_vectors("vecs.f32", rows=10000, dims=64), TrainConfig(workers=2))
"""

__version__ = "0.1.0"

from .affinity import (  # noqa: E402
    ConditionalAffinity,
    NoiseModel,
    build_affinity,
    inverse_rank_weights,
    sample_heads,
    sample_noise_tails,
)
from .ann_index import ClusterAssignment, KnnGraph, build_index, build_knn, kmeans_em, lsh_init  # noqa: E402
from .errors import *  # noqa: E402,F401,F403
from .metrics import MetricReport, neighborhood_preservation, random_triplet_accuracy  # noqa: E402
from .objective import (  # noqa: E402
    ClusterMeans,
    LossBatchSpec,
    cauchy_kernel,
    enumerate_infonce_expectation,
    infonce_loss,
    nomad_gradient,
    nomad_loss,
    taylor_gap,
)
from .optimizer import (  # noqa: E402
    FitResult,
    MeansExchange,
    ShardPlan,
    TrainConfig,
    fit,
    gather_means,
    lr_schedule,
    pca_init,
    run,
    shard_clusters,
    train_epoch,
)
from .vector_io import LayoutMatrix, VectorDataset, load_layout, load_vectors, save_layout  # noqa: E402
