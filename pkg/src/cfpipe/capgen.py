"""Counterfactual caption creation by single-noun substitution.

Pipeline per caption: find noun sites, mask each one and ask the masked LM
for replacements, keep replacements that are still nouns in context, keep
candidates whose sentence similarity to the original falls in an open
interval, and pick the lowest-perplexity survivor.  Candidates from all
sites compete in one pool.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from cfpipe.backends import DEFAULT_MASK, BackendSuite
from cfpipe.errors import AllCandidatesFailed, CfPipeError, ConfigError, DataError
from cfpipe.text import NOUN_TAGS, LexiconTagger, Tagger, byte_slice, splice, tokenize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NounSite:
    token_index: int
    surface: str
    char_span: tuple[int, int]  # UTF-8 byte offsets


@dataclass(frozen=True)
class CandidateCaption:
    text: str
    site: NounSite
    replacement: str
    similarity: Optional[float] = None
    perplexity: Optional[float] = None
    pos_valid: Optional[bool] = None


@dataclass(frozen=True)
class CaptionPair:
    original: str
    counterfactual: str
    altered_from: str
    altered_to: str
    source_id: str
    similarity: Optional[float] = None
    perplexity: Optional[float] = None

    def __post_init__(self):
        if self.original == self.counterfactual:
            raise DataError("counterfactual caption equals the original")
        if self.altered_from == self.altered_to:
            raise DataError("altered subject unchanged")

    def to_json(self) -> dict:
        return {
            "source_id": self.source_id,
            "original": self.original,
            "counterfactual": self.counterfactual,
            "altered_from": self.altered_from,
            "altered_to": self.altered_to,
            "similarity": self.similarity,
            "perplexity": self.perplexity,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CaptionPair":
        return cls(
            original=d["original"],
            counterfactual=d["counterfactual"],
            altered_from=d["altered_from"],
            altered_to=d["altered_to"],
            source_id=str(d["source_id"]),
            similarity=d.get("similarity"),
            perplexity=d.get("perplexity"),
        )


@dataclass(frozen=True)
class CaptionGenConfig:
    top_k: int = 10
    sim_low: float = 0.8
    sim_high: float = 0.91
    mask_placeholder: str = DEFAULT_MASK
    inclusive_range: bool = False

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if not 0.0 <= self.sim_low < self.sim_high <= 1.0:
            raise ConfigError(
                f"need 0 <= sim_low < sim_high <= 1, got ({self.sim_low}, {self.sim_high})"
            )
        if not self.mask_placeholder:
            raise ConfigError("mask placeholder must be non-empty")


@dataclass
class StageLog:
    """Per-caption record of dropped items and backend failures."""

    reason: Optional[str] = None
    dropped: Counter = field(default_factory=Counter)
    errors: list[tuple[str, str, str]] = field(default_factory=list)

    def error(self, stage: str, key: str, exc: Exception) -> None:
        self.errors.append((stage, key, f"{type(exc).__name__}: {exc}"))


def extract_noun_sites(caption: str, tagger: Optional[Tagger] = None) -> list[NounSite]:
    if not caption or not caption.strip():
        raise DataError("caption must be non-empty")
    tagger = tagger or LexiconTagger()
    tokens = tokenize(caption)
    tags = tagger.tag([t.text for t in tokens])
    return [
        NounSite(i, tok.text, (tok.start, tok.end))
        for i, (tok, tag) in enumerate(zip(tokens, tags))
        if tag in NOUN_TAGS
    ]


def _single_token(fill: str) -> Optional[str]:
    fill = fill.strip()
    toks = tokenize(fill)
    if len(toks) != 1 or toks[0].text != fill:
        return None
    return fill


def propose_candidates(
    caption: str,
    sites: Iterable[NounSite],
    cfg: CaptionGenConfig,
    suite: BackendSuite,
    log_: Optional[StageLog] = None,
) -> list[CandidateCaption]:
    log_ = log_ if log_ is not None else StageLog()
    out = []
    for site in sites:
        if byte_slice(caption, *site.char_span) != site.surface:
            raise DataError(f"site {site} does not match caption {caption!r}")
        masked = splice(caption, *site.char_span, cfg.mask_placeholder)
        try:
            fills = suite.mlm.top_k(masked, cfg.top_k)
        except CfPipeError as exc:
            log_.error("mlm", str(site.token_index), exc)
            continue
        seen = set()
        for f in fills:
            repl = _single_token(f.token)
            if repl is None:
                log_.dropped["multi_token_fill"] += 1
                continue
            if repl.casefold() == site.surface.casefold():
                log_.dropped["same_as_original"] += 1
                continue
            if repl in seen:
                continue
            seen.add(repl)
            out.append(CandidateCaption(splice(caption, *site.char_span, repl), site, repl))
    return out


def filter_pos_noun(
    candidates: Iterable[CandidateCaption],
    tagger: Optional[Tagger] = None,
    log_: Optional[StageLog] = None,
) -> list[CandidateCaption]:
    tagger = tagger or LexiconTagger()
    log_ = log_ if log_ is not None else StageLog()
    kept = []
    for cand in candidates:
        tokens = [t.text for t in tokenize(cand.text)]
        i = cand.site.token_index
        try:
            tags = tagger.tag(tokens)
        except CfPipeError as exc:
            log_.error("pos", cand.text, exc)
            continue
        if i < len(tokens) and tokens[i] == cand.replacement and tags[i] in NOUN_TAGS:
            kept.append(replace(cand, pos_valid=True))
        else:
            log_.dropped["not_noun"] += 1
    return kept


def in_range(sim: float, cfg: CaptionGenConfig) -> bool:
    if cfg.inclusive_range:
        return cfg.sim_low <= sim <= cfg.sim_high
    return cfg.sim_low < sim < cfg.sim_high


def filter_similarity(
    candidates: Iterable[CandidateCaption],
    original: str,
    cfg: CaptionGenConfig,
    suite: BackendSuite,
    log_: Optional[StageLog] = None,
) -> list[CandidateCaption]:
    log_ = log_ if log_ is not None else StageLog()
    kept = []
    for cand in candidates:
        try:
            sim = suite.sent_sim.sentence_similarity(original, cand.text)
        except CfPipeError as exc:
            log_.error("similarity", cand.text, exc)
            continue
        if in_range(sim, cfg):
            kept.append(replace(cand, similarity=sim))
        else:
            log_.dropped["similarity_out_of_range"] += 1
    return kept


def select_lowest_perplexity(
    candidates: Iterable[CandidateCaption],
    suite: BackendSuite,
    log_: Optional[StageLog] = None,
) -> Optional[CandidateCaption]:
    """Argmin perplexity; ties go to the lower site index, then the replacement string."""
    log_ = log_ if log_ is not None else StageLog()
    candidates = list(candidates)
    if not candidates:
        return None
    scored = []
    for cand in candidates:
        try:
            scored.append(replace(cand, perplexity=suite.ppl.perplexity(cand.text)))
        except CfPipeError as exc:
            log_.error("perplexity", cand.text, exc)
    if not scored:
        raise AllCandidatesFailed(f"perplexity failed for all {len(candidates)} candidates")
    return min(scored, key=lambda c: (c.perplexity, c.site.token_index, c.replacement))


def make_counterfactual(
    caption: str,
    cfg: CaptionGenConfig,
    suite: BackendSuite,
    *,
    source_id: str = "",
    tagger: Optional[Tagger] = None,
    log_: Optional[StageLog] = None,
) -> Optional[CaptionPair]:
    """Run the whole caption pipeline; ``log_.reason`` explains a ``None`` result."""
    log_ = log_ if log_ is not None else StageLog()
    tagger = tagger or LexiconTagger()
    sites = extract_noun_sites(caption, tagger)
    if not sites:
        log_.reason = "no_sites"
        return None
    stages = (
        ("no_candidates", lambda c: propose_candidates(caption, sites, cfg, suite, log_)),
        ("no_noun_candidates", lambda c: filter_pos_noun(c, tagger, log_)),
        ("no_similar_candidates", lambda c: filter_similarity(c, caption, cfg, suite, log_)),
    )
    cands: list[CandidateCaption] = []
    for reason, stage in stages:
        cands = stage(cands)
        if not cands:
            log_.reason = reason
            return None
    try:
        best = select_lowest_perplexity(cands, suite, log_)
    except AllCandidatesFailed:
        log_.reason = "perplexity_failed"
        raise
    return CaptionPair(
        original=caption,
        counterfactual=best.text,
        altered_from=best.site.surface,
        altered_to=best.replacement,
        source_id=source_id,
        similarity=best.similarity,
        perplexity=best.perplexity,
    )
