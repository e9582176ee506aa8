"""Multi-attribute preference ranking for community QA.

Pools of candidate answers are scored along perceivable attributes
(semantic similarity to the question, time-decayed popularity), fused
into pairwise distance-factor matrices, and ranked without labels; the
resulting ranking drives alignment and list-wise comparison losses and
a family of preference metrics.
"""

__version__ = "0.1.0"

from .apdf import (
    ApdfMatrix,
    DecayConfig,
    GainVector,
    induced_ranks,
    multi_apdf,
    popularity_gain,
    rank_discount,
    semantic_gain,
    single_apdf,
)
from .corpus import FilterConfig, QARecord, ResponseCandidate, read_records, write_records
from .embed import HashedNgramEmbedder, cosine, hashed_ngram_embed, load_external_embeddings
from .errors import (
    DegenerateInputError,
    DumpParseError,
    PrefRankError,
    SchemaError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    best_match,
    bleu,
    evaluate_dataset,
    pearson_r,
    pref_hit,
    pref_recall,
    rouge_l,
    safer_hit,
    spearman_r,
    top_k_matches,
)
from .objective import (
    ComparisonWeights,
    LossBreakdown,
    dpo_pair_loss,
    penalty_weights,
    perceptual_alignment_loss,
    perceptual_comparison_loss,
    plackett_luce_loss,
    reward_weight,
    total_loss,
)
from .pipeline import PerceptionBundle, PreparedRecord, build_perception, prepare_records
from .policy import LogProbTable, ToyPolicy, load_logprob_file, score, train
from .ranking import (
    DynamicRanking,
    SemanticRank,
    brute_force_rank,
    dynamic_rank,
    semantic_rank,
)

__all__ = [
    "ApdfMatrix",
    "ComparisonWeights",
    "DecayConfig",
    "DegenerateInputError",
    "DumpParseError",
    "DynamicRanking",
    "EvalReport",
    "FilterConfig",
    "GainVector",
    "HashedNgramEmbedder",
    "LogProbTable",
    "LossBreakdown",
    "PerceptionBundle",
    "PrefRankError",
    "PreparedRecord",
    "QARecord",
    "ResponseCandidate",
    "SchemaError",
    "SemanticRank",
    "ToyPolicy",
    "ValidationError",
    "best_match",
    "bleu",
    "brute_force_rank",
    "build_perception",
    "cosine",
    "dpo_pair_loss",
    "dynamic_rank",
    "evaluate_dataset",
    "hashed_ngram_embed",
    "induced_ranks",
    "load_external_embeddings",
    "load_logprob_file",
    "multi_apdf",
    "pearson_r",
    "penalty_weights",
    "perceptual_alignment_loss",
    "perceptual_comparison_loss",
    "plackett_luce_loss",
    "popularity_gain",
    "pref_hit",
    "pref_recall",
    "prepare_records",
    "rank_discount",
    "read_records",
    "reward_weight",
    "rouge_l",
    "safer_hit",
    "score",
    "semantic_gain",
    "semantic_rank",
    "single_apdf",
    "spearman_r",
    "top_k_matches",
    "total_loss",
    "train",
    "write_records",
]
