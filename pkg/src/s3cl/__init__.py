"""Self-supervised node representation learning on attributed graphs.

The pipeline decouples neighborhood aggregation from learning: features are
propagated through the self-looped symmetric-normalized transition matrix at
L scales once, up front, and a one-layer ReLU encoder is then pretrained by
two complementary objectives. A structural InfoNCE loss ties each node's
local view to its high-order views against sampled negatives; a semantic
prototype loss pulls nodes toward cluster prototypes inferred
non-parametrically (DP-means with label-propagation refinement) from a
momentum copy of the encoder. Evaluation covers linear-probe classification
and k-means clustering with Hungarian-matched accuracy, NMI, and ARI.
"""

from .config import EpochRecord, TrainConfig, TrainReport
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, NumericalError, S3CLError
from .evaluate import (
    ClusterMetrics,
    SplitSpec,
    classify_eval,
    cluster_eval,
    clustering_metrics,
    kmeans,
    linear_probe,
)
from .graph import (
    AttributedGraph,
    PropagatedViews,
    SparseTransition,
    load_graph,
    normalized_adjacency,
    propagate,
)
from .nn import (
    AdamState,
    ModelParams,
    adam_step,
    ema_update,
    encoder_forward,
    finite_diff_check,
    init_params,
    l2_normalize_rows,
    projector_forward,
)
from .semantic import (
    LabelPropagationConfig,
    PrototypeInferenceConfig,
    PrototypeState,
    infer_prototypes,
    recompute_prototypes,
    refine_labels,
    semantic_loss,
)
from .structural import ContrastBatch, sample_negative_batch, sample_negatives, structural_loss
from .synth import SbmSpec, generate_sbm
from .trainer import embed, joint_loss_and_grads, pretrain

__version__ = "0.1.0"

__all__ = [
    "AttributedGraph",
    "AdamState",
    "Checkpoint",
    "ClusterMetrics",
    "ConfigError",
    "ContrastBatch",
    "DataError",
    "EpochRecord",
    "LabelPropagationConfig",
    "ModelParams",
    "NumericalError",
    "PropagatedViews",
    "PrototypeInferenceConfig",
    "PrototypeState",
    "S3CLError",
    "SbmSpec",
    "SparseTransition",
    "SplitSpec",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "classify_eval",
    "cluster_eval",
    "clustering_metrics",
    "embed",
    "ema_update",
    "encoder_forward",
    "finite_diff_check",
    "generate_sbm",
    "infer_prototypes",
    "init_params",
    "joint_loss_and_grads",
    "kmeans",
    "l2_normalize_rows",
    "linear_probe",
    "load_checkpoint",
    "load_graph",
    "normalized_adjacency",
    "pretrain",
    "projector_forward",
    "propagate",
    "recompute_prototypes",
    "refine_labels",
    "sample_negative_batch",
    "sample_negatives",
    "save_checkpoint",
    "semantic_loss",
    "structural_loss",
]
