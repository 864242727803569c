"""Caption-concreteness curation toolkit.

Computes, standardizes, fuses, and applies caption concreteness scores for
budget-constrained filtering of image-caption corpora, plus the correlation
harness for evaluating scores against human annotations.
"""

from .corpus import (
    AnnotationError,
    AnnotationSet,
    CaptionRecord,
    CorpusError,
    ReadStats,
    ShardManifest,
    load_index,
    read_annotations,
    read_corpus,
    shard,
    write_annotations,
    write_corpus,
)
from .curate import (
    EpochPlan,
    SelectionSpec,
    TrainingBudget,
    emit_distillation_set,
    plan_epochs,
    select,
    select_sharded,
    split_corpus,
)
from .fusion import (
    FitConfig,
    FusionParams,
    LogisticScoreFusion,
    PRESETS,
    apply_fusion,
    binarize_labels,
    fit_fusion,
    fuse_corpus,
    resolve_params,
    solve_logistic,
)
from .gateway import (
    EndpointError,
    GatewayError,
    ProtocolError,
    ScoreRequest,
    ScoreResponse,
    ScorerConnection,
    StubScorer,
    TableScorer,
    attach_scores,
    score_batch,
    stub_score,
)
from .metrics import CorrelationReport, best_of, correlate, edit_distance, edit_similarity
from .standardize import (
    LengthBucketStats,
    LengthLogitStandardizer,
    StandardizationModel,
    caption_length,
    fit_standardizer,
    standardize_corpus,
    standardize_score,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationError",
    "AnnotationSet",
    "CaptionRecord",
    "CorpusError",
    "CorrelationReport",
    "EndpointError",
    "EpochPlan",
    "FitConfig",
    "FusionParams",
    "GatewayError",
    "LengthBucketStats",
    "LengthLogitStandardizer",
    "LogisticScoreFusion",
    "PRESETS",
    "ProtocolError",
    "ReadStats",
    "ScoreRequest",
    "ScoreResponse",
    "ScorerConnection",
    "SelectionSpec",
    "ShardManifest",
    "StandardizationModel",
    "StubScorer",
    "TableScorer",
    "TrainingBudget",
    "apply_fusion",
    "attach_scores",
    "best_of",
    "binarize_labels",
    "caption_length",
    "correlate",
    "edit_distance",
    "edit_similarity",
    "emit_distillation_set",
    "fit_fusion",
    "fit_standardizer",
    "fuse_corpus",
    "load_index",
    "plan_epochs",
    "read_annotations",
    "read_corpus",
    "resolve_params",
    "score_batch",
    "select",
    "select_sharded",
    "shard",
    "solve_logistic",
    "split_corpus",
    "standardize_corpus",
    "standardize_score",
    "stub_score",
    "write_annotations",
    "write_corpus",
]
