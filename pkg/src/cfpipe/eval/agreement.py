"""Fleiss' kappa for multi-rater categorical agreement."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from cfpipe.errors import DataError, DegenerateError, UnevenRaters


@dataclass(frozen=True)
class AgreementReport:
    kappa: float
    n_items: int
    n_raters: int
    category_counts: dict
    p_bar: float
    p_e: float

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa,
            "n_items": self.n_items,
            "n_raters": self.n_raters,
            "category_counts": self.category_counts,
            "observed_agreement": self.p_bar,
            "expected_agreement": self.p_e,
        }


def fleiss_kappa(ratings, categories: Optional[Sequence[str]] = None) -> AgreementReport:
    """Kappa from an items x categories matrix of rating counts.

    Every row must hold the same number of ratings (>= 2).
    """
    m = np.asarray(ratings)
    if m.ndim != 2:
        raise DataError("ratings must be a 2-d items x categories matrix")
    if not np.issubdtype(m.dtype, np.integer):
        if not np.all(np.equal(np.mod(m, 1), 0)):
            raise DataError("rating counts must be integers")
        m = m.astype(np.int64)
    if np.any(m < 0):
        raise DataError("rating counts must be non-negative")
    n_items, n_cat = m.shape
    if n_items < 2:
        raise DataError("need at least 2 items")
    per_item = m.sum(axis=1)
    if np.any(per_item != per_item[0]):
        raise UnevenRaters(f"items have differing rating counts: {sorted(set(per_item.tolist()))}")
    n = int(per_item[0])
    if n < 2:
        raise DataError("need at least 2 raters per item")

    p_j = m.sum(axis=0) / (n_items * n)
    p_i = ((m * m).sum(axis=1) - n) / (n * (n - 1))
    p_bar = float(p_i.mean())
    p_e = float((p_j**2).sum())
    if np.isclose(p_e, 1.0, rtol=0, atol=1e-15):
        raise DegenerateError("all ratings fall in one category; kappa is undefined")
    kappa = (p_bar - p_e) / (1.0 - p_e)
    names = list(categories) if categories is not None else [str(j) for j in range(n_cat)]
    if len(names) != n_cat:
        raise DataError("category names do not match the matrix width")
    return AgreementReport(
        kappa=float(kappa),
        n_items=n_items,
        n_raters=n,
        category_counts={c: int(v) for c, v in zip(names, m.sum(axis=0))},
        p_bar=p_bar,
        p_e=p_e,
    )


def ratings_matrix(records: Iterable, categories: Sequence[str], n_raters: Optional[int] = None):
    """Count matrix from annotation records, keeping only images rated by ``n_raters`` people.

    With ``n_raters=None`` the most common multi-rater count is used, which
    picks out the triple-annotated subset of an annotation file.
    """
    from collections import Counter, defaultdict

    per_image: dict = defaultdict(Counter)
    for r in records:
        per_image[r.image_id][r.label] += 1
    sizes = Counter(sum(c.values()) for c in per_image.values())
    if n_raters is None:
        multi = {k: v for k, v in sizes.items() if k >= 2}
        if not multi:
            raise DataError("no image carries more than one rating")
        n_raters = max(multi, key=lambda k: (multi[k], k))
    ids = sorted(k for k, c in per_image.items() if sum(c.values()) == n_raters)
    return np.array([[per_image[i][c] for c in categories] for i in ids], dtype=np.int64), ids
