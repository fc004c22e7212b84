"""Paired counterfactual image generation and selection.

For one caption pair we over-generate image pairs with random
attention-share fractions, keep pairs whose caption-image and image-image
cosine similarities clear fixed minima, and return the survivor whose
image change points the same way as the caption change (highest
directional similarity).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from cfpipe.backends import BackendSuite, Embedding, ImageRef, cosine
from cfpipe.capgen import CaptionPair
from cfpipe.errors import CfPipeError, ConfigError, DegenerateDirectionError, DimMismatch, PairGenerationFailed

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class GenerationConfig:
    n_candidates: int = 100
    p_low: float = 0.1
    p_high: float = 0.9
    min_caption_image_sim: float = 0.2
    min_image_image_sim: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ConfigError("n_candidates must be >= 1")
        if not 0.0 <= self.p_low < self.p_high <= 1.0:
            raise ConfigError(f"need 0 <= p_low < p_high <= 1, got ({self.p_low}, {self.p_high})")
        for name in ("min_caption_image_sim", "min_image_image_sim"):
            if not -1.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [-1, 1]")


@dataclass
class ImagePairCandidate:
    image_o: ImageRef
    image_c: ImageRef
    p: float
    sim_caption_o: float
    sim_caption_c: float
    sim_image_image: float
    generation_seed: int
    clip_dir: Optional[float] = None
    # cached encoder outputs shared by the filters and the direction score
    emb: Optional[dict] = field(default=None, compare=False, repr=False)

    def to_json(self) -> dict:
        return {
            "image_o": self.image_o.path,
            "image_c": self.image_c.path,
            "p": self.p,
            "sim_caption_o": self.sim_caption_o,
            "sim_caption_c": self.sim_caption_c,
            "sim_image_image": self.sim_image_image,
            "clip_dir": self.clip_dir,
            "generation_seed": self.generation_seed,
        }

    @classmethod
    def from_json(cls, d: dict, source_id: str = "") -> "ImagePairCandidate":
        from cfpipe.backends import ImageSource

        return cls(
            image_o=ImageRef(id=f"{source_id}/orig", path=d["image_o"], source=ImageSource.GENERATED),
            image_c=ImageRef(id=f"{source_id}/cf", path=d["image_c"], source=ImageSource.GENERATED),
            p=d["p"],
            sim_caption_o=d["sim_caption_o"],
            sim_caption_c=d["sim_caption_c"],
            sim_image_image=d["sim_image_image"],
            clip_dir=d.get("clip_dir"),
            generation_seed=d["generation_seed"],
        )


@dataclass
class CounterfactualRecord:
    pair: CaptionPair
    selected: ImagePairCandidate
    rejected_count: int
    backend_descriptor: str
    created_at: str

    @property
    def id(self) -> str:
        return self.pair.source_id

    def to_json(self) -> dict:
        return {
            "type": "counterfactual",
            **self.pair.to_json(),
            **self.selected.to_json(),
            "rejected_count": self.rejected_count,
            "backend_descriptor": self.backend_descriptor,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CounterfactualRecord":
        pair = CaptionPair.from_json(d)
        return cls(
            pair=pair,
            selected=ImagePairCandidate.from_json(d, pair.source_id),
            rejected_count=d["rejected_count"],
            backend_descriptor=d["backend_descriptor"],
            created_at=d["created_at"],
        )


def sample_share_fraction(rng: np.random.Generator, cfg: GenerationConfig = GenerationConfig()) -> float:
    return float(rng.uniform(cfg.p_low, cfg.p_high))


def clip_dir(e_text_o, e_text_c, e_img_o, e_img_c) -> float:
    """Directional similarity: cosine between the caption change and the image change."""
    arrs = [e.values if isinstance(e, Embedding) else np.asarray(e, dtype=np.float64)
            for e in (e_text_o, e_text_c, e_img_o, e_img_c)]
    if len({a.shape for a in arrs}) != 1:
        raise DimMismatch("all four embeddings must share one dim")
    d_text = arrs[1] - arrs[0]
    d_img = arrs[3] - arrs[2]
    n_text, n_img = np.linalg.norm(d_text), np.linalg.norm(d_img)
    if n_text <= DEGENERATE_NORM or n_img <= DEGENERATE_NORM:
        raise DegenerateDirectionError(
            f"difference vector norm too small (text {n_text:.3g}, image {n_img:.3g})"
        )
    return float(min(1.0, max(-1.0, np.dot(d_text, d_img) / (n_text * n_img))))


def _generate_one(pair, suite, e_text_o, e_text_c, p, seed):
    img_o, img_c = suite.pair_generator.generate_pair(pair.original, pair.counterfactual, p, seed)
    e_img_o = suite.image_encoder.encode_image(img_o)
    e_img_c = suite.image_encoder.encode_image(img_c)
    return ImagePairCandidate(
        image_o=img_o,
        image_c=img_c,
        p=p,
        sim_caption_o=cosine(e_text_o, e_img_o),
        sim_caption_c=cosine(e_text_c, e_img_c),
        sim_image_image=cosine(e_img_o, e_img_c),
        generation_seed=seed,
        emb={"text_o": e_text_o, "text_c": e_text_c, "img_o": e_img_o, "img_c": e_img_c},
    )


def overgenerate(
    pair: CaptionPair,
    cfg: GenerationConfig,
    suite: BackendSuite,
    *,
    workers: int = 1,
    errors: Optional[list] = None,
) -> list[ImagePairCandidate]:
    """Generate ``cfg.n_candidates`` pairs; candidate i uses seed ``cfg.seed + i``.

    Share fractions are drawn up front from a generator seeded with
    ``cfg.seed`` so the result does not depend on worker scheduling.
    Failed generations are appended to ``errors`` and skipped.
    """
    rng = np.random.default_rng(cfg.seed)
    ps = [sample_share_fraction(rng, cfg) for _ in range(cfg.n_candidates)]
    e_text_o = suite.text_encoder.encode_text(pair.original)
    e_text_c = suite.text_encoder.encode_text(pair.counterfactual)

    def job(s, i):
        try:
            return _generate_one(pair, s, e_text_o, e_text_c, ps[i], cfg.seed + i)
        except CfPipeError as exc:
            if errors is not None:
                errors.append((cfg.seed + i, f"{type(exc).__name__}: {exc}"))
            log.debug("generation %d failed for %s: %s", i, pair.source_id, exc)
            return None

    if workers > 1:
        shared = suite.for_workers()
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda i: job(shared, i), range(cfg.n_candidates)))
    else:
        results = [job(suite, i) for i in range(cfg.n_candidates)]
    out = [r for r in results if r is not None]
    if not out:
        raise PairGenerationFailed(
            f"all {cfg.n_candidates} generations failed for {pair.source_id or pair.original!r}"
        )
    return out


def passes_filters(cand: ImagePairCandidate, cfg: GenerationConfig) -> bool:
    return (
        cand.sim_caption_o >= cfg.min_caption_image_sim
        and cand.sim_caption_c >= cfg.min_caption_image_sim
        and cand.sim_image_image >= cfg.min_image_image_sim
    )


def filter_pairs(candidates: Iterable[ImagePairCandidate], cfg: GenerationConfig) -> list[ImagePairCandidate]:
    return [c for c in candidates if passes_filters(c, cfg)]


def _candidate_embeddings(cand: ImagePairCandidate, pair: Optional[CaptionPair], suite):
    if cand.emb is None:
        if pair is None or suite is None:
            raise ValueError("candidate has no cached embeddings; pass the caption pair and suite")
        cand.emb = {
            "text_o": suite.text_encoder.encode_text(pair.original),
            "text_c": suite.text_encoder.encode_text(pair.counterfactual),
            "img_o": suite.image_encoder.encode_image(cand.image_o),
            "img_c": suite.image_encoder.encode_image(cand.image_c),
        }
    e = cand.emb
    return e["text_o"], e["text_c"], e["img_o"], e["img_c"]


def select_best(
    candidates: Iterable[ImagePairCandidate],
    suite: Optional[BackendSuite] = None,
    pair: Optional[CaptionPair] = None,
) -> Optional[ImagePairCandidate]:
    """Highest directional similarity wins; ties go to the lowest generation seed.

    Candidates with a degenerate text or image difference are skipped.
    """
    best = None
    for cand in candidates:
        try:
            cand.clip_dir = clip_dir(*_candidate_embeddings(cand, pair, suite))
        except DegenerateDirectionError:
            cand.clip_dir = None
            continue
        if best is None or (-cand.clip_dir, cand.generation_seed) < (-best.clip_dir, best.generation_seed):
            best = cand
    return best


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def generate_record(
    pair: CaptionPair,
    cfg: GenerationConfig,
    suite: BackendSuite,
    *,
    workers: int = 1,
    created_at: Optional[str] = None,
    errors: Optional[list] = None,
) -> Optional[CounterfactualRecord]:
    candidates = overgenerate(pair, cfg, suite, workers=workers, errors=errors)
    best = select_best(filter_pairs(candidates, cfg), suite, pair)
    if best is None:
        return None
    return CounterfactualRecord(
        pair=pair,
        selected=best,
        rejected_count=len(candidates) - 1,
        backend_descriptor=suite.descriptor,
        created_at=created_at or utc_now(),
    )


def safe_dirname(source_id: str) -> str:
    cleaned = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in source_id)
    return cleaned.strip(".") or "_"


def write_record_images(record: CounterfactualRecord, out_dir, ext: str = "png") -> CounterfactualRecord:
    """Save both images under ``<out_dir>/<source_id>/{orig,cf}.<ext>``.

    The stored paths are relative to ``out_dir``; ``ext`` must be a lossless format.
    """
    if ext.lower() not in ("png", "bmp", "tiff", "tif"):
        raise ConfigError(f"image format {ext!r} is not lossless")
    out_dir = Path(out_dir)
    rel = Path(safe_dirname(record.pair.source_id))
    sel = record.selected
    for img, name in ((sel.image_o, "orig"), (sel.image_c, "cf")):
        img.save(out_dir / rel / f"{name}.{ext}")
    sel.image_o = ImageRef(id=f"{record.id}/orig", path=(rel / f"orig.{ext}").as_posix(), source="generated")
    sel.image_c = ImageRef(id=f"{record.id}/cf", path=(rel / f"cf.{ext}").as_posix(), source="generated")
    return record
