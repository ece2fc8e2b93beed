"""Soft-constraint re-ranking toolkit for composed image retrieval."""

__version__ = "0.1.0"

from .constraints import (
    AttributeClassification,
    ConstraintCache,
    DualConstraints,
    generate_constraints,
    parse_constraint_response,
)
from .evaluation import EvalReport, ablation, evaluate, map_at_k, recall_at_k, recall_subset_at_k, sweep_lambda
from .llm import HttpChatProvider, MockChatProvider, ProviderConfig, llm_chat
from .multitarget import (
    MultiTargetRecord,
    SingleTargetTriplet,
    Stage1Config,
    sample_contrastive_triplet,
    select_multi_targets,
)
from .rerank import (
    RerankConfig,
    RerankOutcome,
    ScoreTriple,
    SoftReranker,
    Variant,
    fuse,
    rerank,
    soft_score,
    variant_score,
)
from .vecstore import (
    EmbeddingMatrix,
    RankedList,
    import_embeddings,
    read_store,
    similarities,
    top_k,
    write_store,
)

__all__ = [
    "AttributeClassification",
    "ConstraintCache",
    "DualConstraints",
    "EmbeddingMatrix",
    "EvalReport",
    "HttpChatProvider",
    "MockChatProvider",
    "MultiTargetRecord",
    "ProviderConfig",
    "RankedList",
    "RerankConfig",
    "RerankOutcome",
    "ScoreTriple",
    "SingleTargetTriplet",
    "SoftReranker",
    "Stage1Config",
    "Variant",
    "ablation",
    "evaluate",
    "fuse",
    "generate_constraints",
    "import_embeddings",
    "llm_chat",
    "map_at_k",
    "parse_constraint_response",
    "read_store",
    "recall_at_k",
    "recall_subset_at_k",
    "rerank",
    "sample_contrastive_triplet",
    "select_multi_targets",
    "similarities",
    "soft_score",
    "sweep_lambda",
    "top_k",
    "variant_score",
    "write_store",
]
