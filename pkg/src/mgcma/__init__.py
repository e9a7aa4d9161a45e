"""Multi-granularity cross-modal alignment for speech-text emotion recognition."""

from .contrastive import ContrastiveResult, symmetric_infonce
from .data import (
    DatasetManifest,
    FeatureSequence,
    Pair,
    PairBatch,
    generate_synthetic,
    read_feature_file,
    read_manifest,
    split_folds,
    write_feature_file,
    write_manifest,
)
from .distribution import (
    ContrastiveConfig,
    GaussianEmbedding,
    construct_distribution,
    distribution_contrastive_loss,
    similarity,
    similarity_matrix,
    wasserstein2_sq,
)
from .errors import (
    ContractError,
    CorruptionError,
    EmptySequenceError,
    FormatError,
    MgcmaError,
    ShapeError,
)
from .instance_align import InstanceVector, instance_contrastive_loss, pool_instance
from .metrics import MetricsReport, confusion_matrix, report_from_confusion
from .pipeline import (
    EMOTION_NAMES,
    EmotionLabel,
    LossBreakdown,
    MgcmaModel,
    PipelineConfig,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import ParameterStore, Tensor, backward, grad_check, no_grad
from .token_align import AlignedPair, TokenAlignmentConfig, TokenAlignmentParams, token_align
from .training import (
    ABLATION_VARIANTS,
    TrainConfig,
    TrainResult,
    cross_validate,
    evaluate,
    export_embeddings,
    gradient_audit,
    run_ablations,
    train,
)

__all__ = [
    "ABLATION_VARIANTS",
    "AlignedPair",
    "ContractError",
    "ContrastiveConfig",
    "ContrastiveResult",
    "CorruptionError",
    "DatasetManifest",
    "EMOTION_NAMES",
    "EmotionLabel",
    "EmptySequenceError",
    "FeatureSequence",
    "FormatError",
    "GaussianEmbedding",
    "InstanceVector",
    "LossBreakdown",
    "MetricsReport",
    "MgcmaError",
    "MgcmaModel",
    "Pair",
    "PairBatch",
    "ParameterStore",
    "PipelineConfig",
    "ShapeError",
    "Tensor",
    "TokenAlignmentConfig",
    "TokenAlignmentParams",
    "TrainConfig",
    "TrainResult",
    "backward",
    "confusion_matrix",
    "construct_distribution",
    "cross_validate",
    "distribution_contrastive_loss",
    "evaluate",
    "export_embeddings",
    "generate_synthetic",
    "grad_check",
    "gradient_audit",
    "instance_contrastive_loss",
    "load_checkpoint",
    "no_grad",
    "pool_instance",
    "read_feature_file",
    "read_manifest",
    "report_from_confusion",
    "run_ablations",
    "save_checkpoint",
    "similarity",
    "similarity_matrix",
    "split_folds",
    "symmetric_infonce",
    "token_align",
    "train",
    "write_feature_file",
    "write_manifest",
]

__version__ = "0.1.0"
