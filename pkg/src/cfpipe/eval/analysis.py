"""Dataset-level analyses: label overlap counts and error rates by word list."""

from __future__ import annotations

from typing import Iterable, Sequence

from cfpipe.errors import CoverageError, UndefinedRate

HUMAN_WORDS = frozenset(
    "girl boy man men woman guy kid person people child children couple group lady".split()
)


def _pairs(records) -> dict:
    """pair id -> (altered_from, altered_to), one entry per counterfactual pair."""
    out = {}
    for r in records:
        if hasattr(r, "pair"):
            out[r.pair.source_id] = (r.pair.altered_from, r.pair.altered_to)
        elif getattr(r, "kind", None) == "counterfactual":
            out.setdefault(r.pair_id, (r.altered_from, r.altered_to))
    return out


def label_frequency(cfs, label_set: Iterable[str]) -> int:
    """Number of counterfactual pairs whose altered subject (either side) is a label.

    Matching is case-insensitive exact string equality.
    """
    labels = {w.casefold() for w in label_set}
    if not labels:
        return 0
    return sum(
        1 for a, b in _pairs(cfs).values()
        if (a or "").casefold() in labels or (b or "").casefold() in labels
    )


def format_rate(rate: float) -> str:
    return f"{100.0 * rate:.1f}%"


def error_rate(matched: int, errors: int) -> float:
    if matched <= 0:
        raise UndefinedRate("no matched records; error rate is undefined")
    return errors / matched


def taxonomy_error_rate(annotations: Sequence, cfs, word_list: Iterable[str]):
    """(matched, errors, rate) over counterfactual samples whose altered subject is in ``word_list``.

    A sample counts as an error when its annotators did not pick the
    correct caption (majority verdict for multiply annotated images).
    """
    from cfpipe.dataset import image_verdicts

    words = {w.casefold() for w in word_list}
    verdicts = image_verdicts(annotations)
    samples = [r for r in cfs if getattr(r, "kind", None) == "counterfactual"]
    matched = [
        r for r in samples
        if (r.altered_from or "").casefold() in words or (r.altered_to or "").casefold() in words
    ]
    missing = [r.id for r in matched if r.id not in verdicts]
    if missing:
        raise CoverageError(f"{len(missing)} matched sample(s) lack annotations, e.g. {missing[0]!r}")
    errors = sum(1 for r in matched if not verdicts[r.id])
    return len(matched), errors, error_rate(len(matched), errors)
