"""Evaluation metrics: retrieval recall, ITM differences, agreement, statistics."""

from cfpipe.eval.agreement import AgreementReport, fleiss_kappa, ratings_matrix
from cfpipe.eval.analysis import (
    HUMAN_WORDS,
    error_rate,
    format_rate,
    label_frequency,
    taxonomy_error_rate,
)
from cfpipe.eval.itm import METRICS, Histogram, ItmDiffSamples, ItmTuple, diff_histogram, itm_diffs
from cfpipe.eval.retrieval import (
    RetrievalReport,
    cosine_matrix,
    gold_ranks,
    recall_from_scores,
    retrieval_recall,
    score_matrix,
)
from cfpipe.eval.stats import SignificanceResult, one_tailed_t_test, pearson_with_p

__all__ = [
    "AgreementReport", "fleiss_kappa", "ratings_matrix",
    "HUMAN_WORDS", "error_rate", "format_rate", "label_frequency", "taxonomy_error_rate",
    "METRICS", "Histogram", "ItmDiffSamples", "ItmTuple", "diff_histogram", "itm_diffs",
    "RetrievalReport", "cosine_matrix", "gold_ranks", "recall_from_scores", "retrieval_recall",
    "score_matrix", "SignificanceResult", "one_tailed_t_test", "pearson_with_p",
]
