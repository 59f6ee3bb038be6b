"""Knowledge-graph grounded hallucination correction for RAG pipelines.

Extracts (subject, relation, object) triplets from a trusted context and a
generated text, reconciles the two graphs, repairs or eliminates unverified
assertions, prunes redundant cycles to a spanning forest, and emits the
corrected text with a full reasoning trace. Ships the matching evaluation
harness (ROUGE-L, METEOR, LLM-judge scoring) and a CLI.
"""

from .corrector import (
    CorrectionAction,
    CorrectionReport,
    apply_edits,
    correct,
    eliminated_entity_rate,
    select_salient_sentences,
)
from .kgraph import (
    Edge,
    Entity,
    KnowledgeGraph,
    build_graph,
    find_cycles,
    minimum_spanning_tree,
    verified_subgraph,
)
from .matching import (
    HashingEmbedder,
    Matcher,
    MatcherConfig,
    MatchResult,
    VectorIndex,
    cosine_similarity,
    match_entity,
    normalize_entity,
)
from .textmetrics import EvalRecord, MetricScores, evaluate_dataset, meteor, rouge_l
from .triplets import (
    EntityMention,
    Sentence,
    Triplet,
    extract_triplets,
    ingest_triplets,
    serialize_triplets,
    split_sentences,
)

__version__ = "0.1.0"

__all__ = [
    "CorrectionAction", "CorrectionReport", "apply_edits", "correct",
    "eliminated_entity_rate", "select_salient_sentences",
    "Edge", "Entity", "KnowledgeGraph", "build_graph", "find_cycles",
    "minimum_spanning_tree", "verified_subgraph",
    "HashingEmbedder", "Matcher", "MatcherConfig", "MatchResult", "VectorIndex",
    "cosine_similarity", "match_entity", "normalize_entity",
    "EvalRecord", "MetricScores", "evaluate_dataset", "meteor", "rouge_l",
    "EntityMention", "Sentence", "Triplet", "extract_triplets", "ingest_triplets",
    "serialize_triplets", "split_sentences",
    "__version__",
]
