"""Collaborative filtering on the hypersphere.

Trains implicit-feedback recommenders with either the joint
alignment+uniformity objective or pairwise ranking baselines, evaluates
by full-ranking Recall/NDCG, and measures representation geometry with an
exact popularity-weighted uniformity estimator.
"""

from .data import (
    DatasetSplit,
    InteractionSet,
    PositiveBatch,
    RawInteraction,
    iter_batches,
    load_interactions,
    preprocess,
    split,
)
from .encoders import (
    EmbeddingTable,
    GraphPropagator,
    forward_lgcn,
    forward_mf,
    init_xavier,
    normalize_rows,
    read_embeddings,
    write_embeddings,
)
from .evaluation import (
    GeometryReport,
    HarnessResult,
    RankingMetrics,
    bpr_bound_harness,
    geometry_report,
    measure_alignment,
    measure_uniformity,
    rank_eval,
)
from .losses import (
    LossOutput,
    UniformityConfig,
    align_loss,
    bpr_loss,
    direct_au_loss,
    sample_negatives,
    uniform_loss,
)
from .optim import AdamState, adam_step
from .training import (
    EpochTrace,
    TrainConfig,
    TrainingDiverged,
    emit_trace,
    load_checkpoint,
    read_trace,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
