from ..data.corpus import ZeroShotViolation
from .evaluator import (
    EvaluationResult,
    build_relevance,
    check_unseen,
    cross_corpus_evaluate,
    evaluate,
    query_and_gallery,
)
from .metrics import (
    MetricReport,
    accuracy_at_k,
    average_precision,
    build_report,
    expected_random_average_precision,
    mean_average_precision,
    precision_at_k,
)
from .ranking import RankingResult, encode_items, rank_rn, rank_ret, read_rankings, write_rankings

__all__ = [
    "EvaluationResult",
    "MetricReport",
    "RankingResult",
    "ZeroShotViolation",
    "accuracy_at_k",
    "average_precision",
    "build_relevance",
    "build_report",
    "check_unseen",
    "cross_corpus_evaluate",
    "encode_items",
    "evaluate",
    "expected_random_average_precision",
    "mean_average_precision",
    "precision_at_k",
    "query_and_gallery",
    "rank_rn",
    "rank_ret",
    "read_rankings",
    "write_rankings",
]
