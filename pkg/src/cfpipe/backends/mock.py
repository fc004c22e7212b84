"""Deterministic mock backends.

All mocks derive their numbers from keyed BLAKE2b hashes, so results are a
pure function of (input, seed) and identical across processes and
platforms.  They are cheap enough to drive every filter threshold in the
pipeline with real floating-point behaviour.

The text and image encoders share one trick: each word gets an RGB colour
from its hash, and each colour maps to a fixed random vector (the sum of
one seeded basis vector per channel value).  Text is the
mean vector of its words' colours; an image is the mean vector of its
tiles' colours.  The mock generator paints tiles in word colours, so
captions and the images rendered from them genuinely align.
"""

from __future__ import annotations

import hashlib
import math
from functools import lru_cache
from typing import Mapping, Optional, Sequence

import numpy as np

from cfpipe.backends.base import (
    DEFAULT_MASK,
    BackendSuite,
    Embedding,
    EmbeddingItmScorer,
    ImageEncoder,
    ImageRef,
    ImageSource,
    MaskedLM,
    MaskFill,
    PairGenerator,
    PerplexityScorer,
    SentenceSimilarity,
    TextEncoder,
    cosine,
)
from cfpipe.text import words

DEFAULT_DIM = 16

# A small caption-flavoured vocabulary: mostly nouns, plus a few verbs,
# adjectives and multi-word fills so the caption filters have work to do.
DEFAULT_VOCAB = (
    "cat dog horse cow sheep bird bear elephant zebra giraffe man woman boy girl "
    "child person car bus truck train bicycle motorcycle boat plane table chair "
    "bench couch bed pizza sandwich cake banana apple phone laptop umbrella kite "
    "ball frisbee skateboard surfboard street field beach kitchen room "
    "runs sitting big red small"
).split() + ["teddy bear", "hot dog"]


def _digest(*parts: object, seed: int = 0, size: int = 16) -> bytes:
    h = hashlib.blake2b(digest_size=size, key=int(seed).to_bytes(8, "little", signed=True))
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return h.digest()


def hash_uniform(*parts: object, seed: int = 0) -> float:
    """Uniform value in (0, 1) derived from the hash of ``parts``."""
    n = int.from_bytes(_digest(*parts, seed=seed, size=8), "little")
    return (n + 0.5) / 2.0**64


@lru_cache(maxsize=65536)
def hash_vector(key: str, dim: int, seed: int) -> np.ndarray:
    """Standard-normal vector seeded from the hash of ``key``."""
    rng = np.random.default_rng(int.from_bytes(_digest(key, seed=seed), "little"))
    v = rng.standard_normal(dim)
    v.flags.writeable = False
    return v


def word_color(word: str, seed: int) -> tuple[int, int, int]:
    d = _digest("color", word.lower(), seed=seed, size=3)
    return d[0], d[1], d[2]


@lru_cache(maxsize=64)
def _channel_basis(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(int.from_bytes(_digest("rgb-basis", dim, seed=seed), "little"))
    basis = rng.standard_normal((3, 256, dim)) / np.sqrt(3.0)
    basis.flags.writeable = False
    return basis


def color_vectors(rgb: np.ndarray, dim: int, seed: int) -> np.ndarray:
    """Row-wise embedding of an (n, 3) integer colour array: sum of per-channel basis vectors."""
    rgb = np.asarray(rgb, dtype=np.intp)
    b = _channel_basis(dim, seed)
    return b[0, rgb[:, 0]] + b[1, rgb[:, 1]] + b[2, rgb[:, 2]]


def color_vector(rgb: Sequence[int], dim: int, seed: int) -> np.ndarray:
    return color_vectors(np.asarray([rgb]), dim, seed)[0]


class _Mock:
    thread_safe = True

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 2:
            raise ValueError("mock dim must be >= 2")
        self.dim = int(dim)
        self.seed = int(seed)
        self.descriptor = f"mock:{self.dim}:{self.seed}"


class MockMaskedLM(_Mock, MaskedLM):
    """Ranks a fixed vocabulary by a hash of (masked context, word).

    Scores are log-softmax values over the vocabulary, so they behave like
    model log-probabilities.
    """

    def __init__(
        self,
        vocabulary: Optional[Sequence[str]] = None,
        dim: int = DEFAULT_DIM,
        seed: int = 0,
        mask_placeholder: str = DEFAULT_MASK,
    ):
        super().__init__(dim, seed)
        vocab = list(DEFAULT_VOCAB if vocabulary is None else vocabulary)
        if len(set(vocab)) != len(vocab):
            raise ValueError("mock vocabulary has duplicates")
        self.vocabulary = tuple(vocab)
        self.mask_placeholder = mask_placeholder

    def logits(self, masked_text: str) -> dict[str, float]:
        context = masked_text.lower()
        return {w: 8.0 * hash_uniform("mlm", context, w, seed=self.seed) for w in self.vocabulary}

    def _top_k(self, masked_text, k):
        logits = self.logits(masked_text)
        if not logits:
            return []
        m = max(logits.values())
        log_z = m + math.log(sum(math.exp(v - m) for v in logits.values()))
        ranked = sorted(logits.items(), key=lambda kv: (-kv[1], kv[0]))
        return [MaskFill(w, v - log_z) for w, v in ranked[:k]]


class MockSentenceSimilarity(_Mock, SentenceSimilarity):
    """Cosine of bag-of-words hash embeddings (sum of per-word vectors)."""

    def embed(self, text: str) -> np.ndarray:
        toks = [w.lower() for w in words(text)]
        if not toks:
            return np.zeros(self.dim)
        return np.sum([hash_vector(f"sent:{w}", self.dim, self.seed) for w in toks], axis=0)

    def _similarity(self, a, b):
        if a == b:
            return 1.0
        ea, eb = self.embed(a), self.embed(b)
        # cosine of (a, b) and (b, a) must agree bit-for-bit
        return cosine(ea, eb) if a <= b else cosine(eb, ea)


class MockPerplexity(_Mock, PerplexityScorer):
    """Unigram language model: perplexity = 2 ** mean per-token surprisal.

    Tokens are lower-cased words.  Words missing from ``table`` get a
    hash-derived probability in [1e-6, 1e-2] so unseen captions still
    produce varied scores.
    """

    def __init__(
        self,
        table: Optional[Mapping[str, float]] = None,
        dim: int = DEFAULT_DIM,
        seed: int = 0,
    ):
        super().__init__(dim, seed)
        self.table = {k.lower(): float(v) for k, v in (table or {}).items()}
        for w, p in self.table.items():
            if not 0.0 < p <= 1.0:
                raise ValueError(f"unigram probability for {w!r} out of range: {p}")

    def prob(self, word: str) -> float:
        w = word.lower()
        if w in self.table:
            return self.table[w]
        return 10.0 ** (-6.0 + 4.0 * hash_uniform("unigram", w, seed=self.seed))

    def _perplexity(self, text):
        toks = words(text)
        if not toks:
            return 1.0
        surprisal = [-math.log2(self.prob(t)) for t in toks]
        return 2.0 ** (sum(surprisal) / len(surprisal))


class MockTextEncoder(_Mock, TextEncoder):
    def word_vector(self, word: str) -> np.ndarray:
        return color_vector(word_color(word, self.seed), self.dim, self.seed)

    def _encode_text(self, text):
        toks = words(text)
        return Embedding(np.mean([self.word_vector(w) for w in toks], axis=0))


class MockImageEncoder(_Mock, ImageEncoder):
    """Mean colour-vector over a ``grid x grid`` tiling of the image."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0, grid: int = 8):
        super().__init__(dim, seed)
        self.grid = grid

    def _encode_pixels(self, pixels):
        h, w = pixels.shape[:2]
        if h % self.grid == 0 and w % self.grid == 0:
            tiles = pixels.reshape(self.grid, h // self.grid, self.grid, w // self.grid, -1)
            means = tiles.mean(axis=(1, 3), dtype=np.float64).reshape(-1, pixels.shape[2])
        else:
            means = np.array([
                tile.reshape(-1, 3).mean(axis=0)
                for band in np.array_split(pixels, self.grid, axis=0)
                for tile in np.array_split(band, self.grid, axis=1) if tile.size
            ])
        vecs = color_vectors(np.rint(means).astype(np.intp), self.dim, self.seed)
        return Embedding(vecs.mean(axis=0))


class MockPairGenerator(_Mock, PairGenerator):
    """Procedural stand-in for attention-shared paired generation.

    The canvas is a ``grid x grid`` array of flat-coloured tiles.  The seed
    fixes which word position each tile depicts and a per-tile uniform draw
    ``u``.  Tiles with ``u < p`` are "attention-shared": they show the colour
    of their word, so tiles of words common to both prompts are pixel
    identical.  The remaining tiles get a colour hashed from the image's own
    prompt, so they diverge whenever the prompts differ.  Identical prompts
    therefore always give identical images, and larger ``p`` shares more.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0, grid: int = 8, tile: int = 4):
        super().__init__(dim, seed)
        self.grid = grid
        self.tile = tile

    def _layout(self, n_words: int, seed: int):
        rng = np.random.default_rng([self.seed & 0xFFFFFFFF, seed & 0xFFFFFFFF, n_words])
        n_tiles = self.grid * self.grid
        return rng.integers(0, n_words, size=n_tiles), rng.random(n_tiles)

    def _render(self, prompt: str, positions, shared, seed: int) -> np.ndarray:
        toks = words(prompt)
        # unshared tiles: colours from a stream keyed by this prompt and seed
        free = np.random.default_rng(
            int.from_bytes(_digest("free", prompt, seed, seed=self.seed), "little")
        ).integers(0, 256, size=(len(positions), 3), dtype=np.uint8)
        palette = [word_color(t, self.seed) for t in toks]
        colors = free.copy()
        for i, (pos, is_shared) in enumerate(zip(positions, shared)):
            if is_shared and pos < len(toks):
                colors[i] = palette[pos]
        img = colors.reshape(self.grid, self.grid, 3)
        return np.repeat(np.repeat(img, self.tile, axis=0), self.tile, axis=1)

    def _generate_pair(self, prompt_o, prompt_c, p, seed):
        n = max(len(words(prompt_o)), len(words(prompt_c)), 1)
        positions, u = self._layout(n, seed)
        shared = u < p
        tag = _digest(prompt_o, prompt_c, p, seed, seed=self.seed, size=6).hex()
        img_o = ImageRef(
            id=f"gen-{tag}-o", pixels=self._render(prompt_o, positions, shared, seed),
            source=ImageSource.MOCK,
        )
        img_c = ImageRef(
            id=f"gen-{tag}-c", pixels=self._render(prompt_c, positions, shared, seed),
            source=ImageSource.MOCK,
        )
        return img_o, img_c


def mock_suite(dim: int = DEFAULT_DIM, seed: int = 0, **overrides) -> BackendSuite:
    """Full suite of mocks sharing one (dim, seed); override any role by keyword."""
    text = overrides.pop("text_encoder", None) or MockTextEncoder(dim, seed)
    image = overrides.pop("image_encoder", None) or MockImageEncoder(dim, seed)
    handles = dict(
        mlm=MockMaskedLM(dim=dim, seed=seed),
        sent_sim=MockSentenceSimilarity(dim, seed),
        ppl=MockPerplexity(dim=dim, seed=seed),
        text_encoder=text,
        image_encoder=image,
        pair_generator=MockPairGenerator(dim, seed),
        itm_scorer=EmbeddingItmScorer(text, image),
    )
    handles.update(overrides)
    return BackendSuite(**handles)
