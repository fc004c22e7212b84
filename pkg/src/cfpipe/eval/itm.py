"""Image-text matching score differences against random and counterfactual distractors."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from cfpipe.backends import ImageRef
from cfpipe.errors import CfPipeError, DataError, EmptyInput

METRICS = ("ir_random", "ir_cf", "tr_random", "tr_cf")


@dataclass(frozen=True)
class ItmTuple:
    """Original pair (c_o, i_o), generated images, counterfactual caption, random pair (c_r, i_r)."""

    c_o: str
    i_o: ImageRef
    i_o_s: ImageRef
    c_c: str
    i_c_s: ImageRef
    c_r: str
    i_r: ImageRef

    def __post_init__(self):
        if self.i_o.id == self.i_r.id:
            raise DataError(f"random pair must use a different image than the original ({self.i_o.id!r})")


@dataclass
class ItmDiffSamples:
    ir_random: list = field(default_factory=list)
    ir_cf: list = field(default_factory=list)
    tr_random: list = field(default_factory=list)
    tr_cf: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {m: list(getattr(self, m)) for m in METRICS} | {"skipped": list(self.skipped)}

    @classmethod
    def from_json(cls, d: dict) -> "ItmDiffSamples":
        return cls(**{m: list(d[m]) for m in METRICS}, skipped=list(d.get("skipped", [])))


def itm_diffs(tuples: Iterable[ItmTuple], scorer) -> ItmDiffSamples:
    """Four score differences per tuple; tuples whose scoring fails are skipped and noted."""
    out = ItmDiffSamples()
    for n, t in enumerate(tuples):
        g = scorer.itm_score
        try:
            rr = g(t.c_r, t.i_r)
            r_io = g(t.c_r, t.i_o)
            o_ir = g(t.c_o, t.i_r)
            cc = g(t.c_c, t.i_c_s)
            c_ios = g(t.c_c, t.i_o_s)
            o_ics = g(t.c_o, t.i_c_s)
        except CfPipeError as exc:
            out.skipped.append((n, f"{type(exc).__name__}: {exc}"))
            continue
        vals = (rr - r_io, cc - c_ios, rr - o_ir, cc - o_ics)
        if not all(np.isfinite(vals)):
            out.skipped.append((n, "non-finite score"))
            continue
        out.ir_random.append(vals[0])
        out.ir_cf.append(vals[1])
        out.tr_random.append(vals[2])
        out.tr_cf.append(vals[3])
    return out


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: dict  # metric -> np.ndarray of bin counts
    frac_below_zero: dict

    def rows(self, metric: str):
        c = self.counts[metric]
        return [(float(self.edges[i]), float(self.edges[i + 1]), int(c[i])) for i in range(len(c))]

    def write_csv(self, path, metric: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "count"])
            w.writerows(self.rows(metric))


def diff_histogram(samples: ItmDiffSamples, bins: int = 50, metrics=METRICS) -> Histogram:
    """Equal-width bins over the pooled range of all chosen metrics."""
    if bins < 1:
        raise DataError("bins must be positive")
    data = {m: np.asarray(getattr(samples, m), dtype=np.float64) for m in metrics}
    pooled = np.concatenate(list(data.values())) if data else np.array([])
    if pooled.size == 0:
        raise EmptyInput("no ITM difference samples")
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts = {m: np.histogram(v, bins=edges)[0] for m, v in data.items()}
    below = {m: (float(np.mean(v < 0)) if v.size else float("nan")) for m, v in data.items()}
    return Histogram(edges, counts, below)
