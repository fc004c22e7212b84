"""Abstract model interfaces and the value types they exchange.

Every model the pipeline touches (masked LM, sentence similarity, language
model perplexity, dual encoder, paired image generator, ITM scorer) sits
behind one of the small interfaces below.  Subclasses implement the
underscored hook; the public method validates inputs first so every
backend enforces the same preconditions.
"""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from cfpipe.errors import (
    BackendError,
    DataError,
    DecodeError,
    DimMismatch,
    MaskCountError,
    ZeroNormError,
)

DEFAULT_MASK = "<mask>"


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] < 2:
            raise DataError(f"embedding must be a vector of dim >= 2, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("embedding has non-finite entries")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def normalized(self) -> "Embedding":
        n = self.norm
        if n == 0.0:
            raise ZeroNormError("cannot normalize a zero-norm embedding")
        return Embedding(self.values / n)

    def __eq__(self, other):
        if not isinstance(other, Embedding):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


def _as_array(x) -> np.ndarray:
    return x.values if isinstance(x, Embedding) else np.asarray(x, dtype=np.float64)


def cosine(a, b) -> float:
    """Cosine similarity of two vectors, normalizing at point of use.

    Raises ZeroNormError instead of returning NaN when either side is zero.
    """
    u, v = _as_array(a), _as_array(b)
    if u.shape != v.shape:
        raise DimMismatch(f"dims differ: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroNormError("cosine undefined for zero-norm vector")
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))


class ImageSource(str, Enum):
    GENERATED = "generated"
    ORIGINAL = "original"
    MOCK = "mock"


@dataclass(eq=False)
class ImageRef:
    """An image either held in memory (H x W x 3 uint8) or stored on disk."""

    id: str
    pixels: Optional[np.ndarray] = None
    path: Optional[str] = None
    source: ImageSource = ImageSource.ORIGINAL

    def __post_init__(self):
        if (self.pixels is None) == (self.path is None):
            raise DataError(f"image {self.id!r}: exactly one of pixels/path must be set")
        if self.pixels is not None:
            px = np.asarray(self.pixels)
            if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] == 0 or px.shape[1] == 0:
                raise DataError(f"image {self.id!r}: expected HxWx3 pixels, got {px.shape}")
            if px.dtype != np.uint8:
                raise DataError(f"image {self.id!r}: pixels must be uint8")
            self.pixels = px
        if self.path is not None:
            self.path = str(self.path)
        self.source = ImageSource(self.source)

    def load(self) -> np.ndarray:
        if self.pixels is not None:
            return self.pixels
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(self.path) as im:
                return np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            raise DecodeError(f"cannot decode image {self.path}: {exc}") from exc

    def save(self, path: Union[str, Path]) -> "ImageRef":
        """Write pixels losslessly (format from the suffix) and return a path-backed ref."""
        from PIL import Image

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(self.load()).save(path)
        return ImageRef(id=self.id, path=str(path), source=self.source)

    def __eq__(self, other):
        if not isinstance(other, ImageRef):
            return NotImplemented
        if self.id != other.id or self.source != other.source or self.path != other.path:
            return False
        if self.pixels is None or other.pixels is None:
            return self.pixels is None and other.pixels is None
        return np.array_equal(self.pixels, other.pixels)


def _require_text(name: str, text: str) -> None:
    if not isinstance(text, str) or not text.strip():
        raise DataError(f"{name} must be a non-empty string")


@dataclass(frozen=True)
class MaskFill:
    token: str
    score: float

    def __post_init__(self):
        if not self.token:
            raise DataError("mask fill token must be non-empty")


class Backend(ABC):
    """Common base: a descriptor and a concurrency-capability flag.

    Handles that are not ``thread_safe`` get serialized by the orchestrator.
    """

    thread_safe: bool = True
    descriptor: str = "abstract"


class MaskedLM(Backend):
    mask_placeholder: str = DEFAULT_MASK

    def top_k(self, masked_text: str, k: int) -> list[MaskFill]:
        n = masked_text.count(self.mask_placeholder)
        if n != 1:
            raise MaskCountError(
                f"expected exactly one {self.mask_placeholder!r} in text, found {n}"
            )
        if k < 1:
            raise DataError("k must be positive")
        fills = self._top_k(masked_text, k)
        return sorted(fills, key=lambda f: -f.score)[:k]

    @abstractmethod
    def _top_k(self, masked_text: str, k: int) -> list[MaskFill]: ...


class SentenceSimilarity(Backend):
    def sentence_similarity(self, a: str, b: str) -> float:
        _require_text("a", a)
        _require_text("b", b)
        return self._similarity(a, b)

    @abstractmethod
    def _similarity(self, a: str, b: str) -> float: ...


class PerplexityScorer(Backend):
    def perplexity(self, text: str) -> float:
        _require_text("text", text)
        value = self._perplexity(text)
        if not np.isfinite(value) or value <= 0:
            raise BackendError(f"perplexity backend returned invalid value {value!r}")
        return float(value)

    @abstractmethod
    def _perplexity(self, text: str) -> float: ...


class TextEncoder(Backend):
    dim: int

    def encode_text(self, text: str) -> Embedding:
        _require_text("text", text)
        return self._encode_text(text)

    @abstractmethod
    def _encode_text(self, text: str) -> Embedding: ...


class ImageEncoder(Backend):
    dim: int

    def encode_image(self, image: ImageRef) -> Embedding:
        return self._encode_pixels(image.load())

    @abstractmethod
    def _encode_pixels(self, pixels: np.ndarray) -> Embedding: ...


class PairGenerator(Backend):
    def generate_pair(
        self, prompt_o: str, prompt_c: str, p: float, seed: int
    ) -> tuple[ImageRef, ImageRef]:
        _require_text("prompt_o", prompt_o)
        _require_text("prompt_c", prompt_c)
        if not 0.0 <= p <= 1.0:
            raise DataError(f"attention-share fraction must lie in [0, 1], got {p}")
        return self._generate_pair(prompt_o, prompt_c, float(p), int(seed))

    @abstractmethod
    def _generate_pair(
        self, prompt_o: str, prompt_c: str, p: float, seed: int
    ) -> tuple[ImageRef, ImageRef]: ...


class ItmScorer(Backend):
    @abstractmethod
    def itm_score(self, caption: str, image: ImageRef) -> float: ...


class EmbeddingItmScorer(ItmScorer):
    """ITM score as the cosine of a dual encoder's text and image embeddings."""

    def __init__(self, text_encoder: TextEncoder, image_encoder: ImageEncoder):
        self.text_encoder = text_encoder
        self.image_encoder = image_encoder
        self.thread_safe = text_encoder.thread_safe and image_encoder.thread_safe
        self.descriptor = f"cosine({text_encoder.descriptor},{image_encoder.descriptor})"

    def itm_score(self, caption: str, image: ImageRef) -> float:
        return cosine(
            self.text_encoder.encode_text(caption), self.image_encoder.encode_image(image)
        )


class _Serialized:
    """Proxy that funnels every call on a non-thread-safe handle through one lock."""

    def __init__(self, handle):
        self._handle = handle
        self._lock = threading.Lock()

    def __getattr__(self, name):
        attr = getattr(self._handle, name)
        if not callable(attr):
            return attr

        def locked(*args, **kwargs):
            with self._lock:
                return attr(*args, **kwargs)

        return locked


ROLES = (
    "mlm",
    "sent_sim",
    "ppl",
    "text_encoder",
    "image_encoder",
    "pair_generator",
    "itm_scorer",
)


@dataclass
class BackendSuite:
    mlm: MaskedLM
    sent_sim: SentenceSimilarity
    ppl: PerplexityScorer
    text_encoder: TextEncoder
    image_encoder: ImageEncoder
    pair_generator: PairGenerator
    itm_scorer: ItmScorer
    descriptor: str = field(default="")

    def __post_init__(self):
        for role in ROLES:
            if getattr(self, role) is None:
                raise DataError(f"backend suite is missing the {role!r} handle")
        if self.text_encoder.dim != self.image_encoder.dim:
            raise DimMismatch(
                f"text encoder dim {self.text_encoder.dim} != image encoder dim {self.image_encoder.dim}"
            )
        if not self.descriptor:
            self.descriptor = ";".join(
                f"{role}={getattr(self, role).descriptor}" for role in ROLES
            )

    def for_workers(self) -> "BackendSuite":
        """Copy of the suite where single-threaded handles are lock-wrapped."""
        wrapped = {
            role: (h if getattr(h, "thread_safe", False) else _Serialized(h))
            for role in ROLES
            for h in [getattr(self, role)]
        }
        suite = object.__new__(BackendSuite)
        suite.__dict__.update(wrapped, descriptor=self.descriptor)
        return suite


def embeddings_to_matrix(embs: Sequence[Embedding]) -> np.ndarray:
    if not embs:
        return np.zeros((0, 0))
    dims = {e.dim for e in embs}
    if len(dims) != 1:
        raise DimMismatch(f"mixed embedding dims {sorted(dims)}")
    return np.stack([e.values for e in embs])
