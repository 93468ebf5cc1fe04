"""Hardware CWE labeling, embedding, and line-level bug localization for Verilog."""

__version__ = "0.1.0"

from .corpus import DesignUnit, SourceLine, load_corpus, segment_lines
from .labeling import (
    ProviderVerdict,
    VoteResult,
    query_provider,
    vote_lines,
    vote_module,
)
from .embeddings import (
    EmbeddingVector,
    LineFeature,
    combine_line_features,
    embed_lines,
    embed_module,
    fallback_embed,
)
from .store import EmbeddingStore
from .classifier import (
    GbdtConfig,
    SplitSpec,
    TrainedModel,
    auto_pos_weight,
    predict_design,
    predict_label,
    predict_proba,
    split_dataset,
    train,
)
from .evaluation import (
    ConfusionMatrix,
    EvaluationReport,
    aggregate,
    class_metrics,
    confusion,
    pr_curve,
    threshold_sweep,
)
