"""Recall@K for image-text retrieval.

Dual encoders rank the gallery by cosine similarity; cross-encoders hand
in a precomputed score matrix.  Both paths share ``recall_from_scores``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from cfpipe.backends import Embedding
from cfpipe.errors import DataError, DimMismatch, EmptyGallery, LengthMismatch, ZeroNormError

DIRECTIONS = ("text_retrieval", "image_retrieval")


@dataclass(frozen=True)
class RetrievalReport:
    direction: str
    recall_at: dict
    n_queries: int

    def to_json(self) -> dict:
        return {
            "direction": self.direction,
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "n_queries": self.n_queries,
        }


def gold_ranks(scores: np.ndarray, gold: Sequence[int]) -> np.ndarray:
    """0-based rank of each query's gold item; equal scores favour the lower gallery index."""
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.int64)
    rows = np.arange(scores.shape[0])
    g = scores[rows, gold][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    ahead = (scores > g) | ((scores == g) & (idx < gold[:, None]))
    return ahead.sum(axis=1)


def recall_from_scores(
    scores, gold: Sequence[int], ks: Iterable[int] = (1, 5, 10), direction: str = "text_retrieval"
) -> RetrievalReport:
    if direction not in DIRECTIONS:
        raise DataError(f"direction must be one of {DIRECTIONS}")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] == 0:
        raise EmptyGallery("gallery is empty")
    if scores.shape[0] == 0:
        raise DataError("no queries")
    if len(gold) != scores.shape[0]:
        raise LengthMismatch(f"{len(gold)} gold indices for {scores.shape[0]} queries")
    if min(gold) < 0 or max(gold) >= scores.shape[1]:
        raise DataError("gold index outside the gallery")
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise DataError("ks must be positive integers")
    ranks = gold_ranks(scores, gold)
    return RetrievalReport(
        direction=direction,
        recall_at={k: float(np.mean(ranks < k)) for k in ks},
        n_queries=int(scores.shape[0]),
    )


def _unit_rows(embs: Sequence[Embedding]) -> np.ndarray:
    m = np.stack([e.values if isinstance(e, Embedding) else np.asarray(e, float) for e in embs])
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroNormError("zero-norm embedding in retrieval input")
    return m / norms


def cosine_matrix(query_embs, gallery_embs) -> np.ndarray:
    if len(gallery_embs) == 0:
        raise EmptyGallery("gallery is empty")
    q, g = _unit_rows(query_embs), _unit_rows(gallery_embs)
    if q.shape[1] != g.shape[1]:
        raise DimMismatch(f"query dim {q.shape[1]} != gallery dim {g.shape[1]}")
    return q @ g.T


def retrieval_recall(
    query_embs: Sequence[Embedding],
    gallery_embs: Sequence[Embedding],
    gold: Sequence[int],
    ks: Iterable[int] = (1, 5, 10),
    direction: str = "text_retrieval",
) -> RetrievalReport:
    if len(query_embs) != len(gold):
        raise LengthMismatch(f"{len(gold)} gold indices for {len(query_embs)} queries")
    return recall_from_scores(cosine_matrix(query_embs, gallery_embs), gold, ks, direction)


def score_matrix(scorer, captions: Sequence[str], images, direction: str = "text_retrieval") -> np.ndarray:
    """ITM score matrix for cross-encoders: rows are queries, columns gallery items."""
    s = np.array([[scorer.itm_score(c, im) for im in images] for c in captions], dtype=np.float64)
    return s if direction == "image_retrieval" else s.T
