"""Desk-scale engine for joint clustering and representation learning.

Two training loops over a small trainable feature extractor: an online loop
that folds batch-wise pseudo-label reassignment and centroid maintenance
into every optimization step, and an offline baseline that re-clusters the
whole dataset once per epoch. Includes synthetic long-tail blob generation,
clustering metrics, and a reproducible CLI.
"""

from .backbone import Backbone, SgdConfig
from .data import BlobSpec, Dataset, gen_blobs, load_csv, write_csv
from .memory import CentroidsMemory, SamplesMemory, init_memories
from .metrics import loss_stability, nmi, purity, switch_ratio
from .rebalance import RebalanceConfig, class_weights, handle_small_clusters
from .trainer import RunConfig, RunLog, train, train_dc, train_odc

__version__ = "0.1.0"

__all__ = [
    "Backbone",
    "BlobSpec",
    "CentroidsMemory",
    "Dataset",
    "RebalanceConfig",
    "RunConfig",
    "RunLog",
    "SamplesMemory",
    "SgdConfig",
    "class_weights",
    "gen_blobs",
    "handle_small_clusters",
    "init_memories",
    "load_csv",
    "loss_stability",
    "nmi",
    "purity",
    "switch_ratio",
    "train",
    "train_dc",
    "train_odc",
    "write_csv",
    "__version__",
]
