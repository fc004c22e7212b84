"""Model interfaces, deterministic mocks and descriptor-based suite loading.

A backend descriptor is a string ``<scheme>:<args>``.  The built-in
``mock:<dim>:<seed>`` scheme builds the deterministic mocks; other schemes
(e.g. wrappers around real checkpoints) are added with ``register_backend``.
"""

from __future__ import annotations

from typing import Callable, Mapping, Union

from cfpipe.backends.base import (
    DEFAULT_MASK,
    ROLES,
    BackendSuite,
    Embedding,
    EmbeddingItmScorer,
    ImageEncoder,
    ImageRef,
    ImageSource,
    ItmScorer,
    MaskedLM,
    MaskFill,
    PairGenerator,
    PerplexityScorer,
    SentenceSimilarity,
    TextEncoder,
    cosine,
)
from cfpipe.backends.mock import (
    MockImageEncoder,
    MockMaskedLM,
    MockPairGenerator,
    MockPerplexity,
    MockSentenceSimilarity,
    MockTextEncoder,
    mock_suite,
)
from cfpipe.errors import ConfigError

__all__ = [
    "DEFAULT_MASK",
    "ROLES",
    "BackendSuite",
    "Embedding",
    "EmbeddingItmScorer",
    "ImageEncoder",
    "ImageRef",
    "ImageSource",
    "ItmScorer",
    "MaskedLM",
    "MaskFill",
    "PairGenerator",
    "PerplexityScorer",
    "SentenceSimilarity",
    "TextEncoder",
    "cosine",
    "mock_suite",
    "load_suite",
    "register_backend",
    "parse_mock_descriptor",
]

# factory(role, args) -> handle
_REGISTRY: dict[str, Callable[[str, str], object]] = {}


def register_backend(scheme: str, factory: Callable[[str, str], object]) -> None:
    _REGISTRY[scheme] = factory


def parse_mock_descriptor(descriptor: str) -> tuple[int, int]:
    parts = descriptor.split(":")
    if len(parts) != 3 or parts[0] != "mock":
        raise ConfigError(f"mock descriptor must look like mock:<dim>:<seed>, got {descriptor!r}")
    try:
        dim, seed = int(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"non-integer dim/seed in {descriptor!r}") from None
    if dim < 2:
        raise ConfigError(f"mock dim must be >= 2 in {descriptor!r}")
    return dim, seed


_MOCK_CLASSES = {
    "mlm": lambda d, s: MockMaskedLM(dim=d, seed=s),
    "sent_sim": MockSentenceSimilarity,
    "ppl": lambda d, s: MockPerplexity(dim=d, seed=s),
    "text_encoder": MockTextEncoder,
    "image_encoder": MockImageEncoder,
    "pair_generator": MockPairGenerator,
}


def _build(role: str, descriptor: str):
    scheme, _, args = descriptor.partition(":")
    if scheme == "mock":
        dim, seed = parse_mock_descriptor(descriptor)
        return _MOCK_CLASSES[role](dim, seed)
    if scheme in _REGISTRY:
        return _REGISTRY[scheme](role, args)
    raise ConfigError(f"no backend registered for scheme {scheme!r} (role {role})")


def load_suite(descriptors: Union[str, Mapping[str, str]]) -> BackendSuite:
    """Build a suite from one descriptor for all roles or a per-role mapping.

    Missing roles fall back on the ``default`` key.  The ITM scorer defaults
    to the cosine of the suite's own encoders.
    """
    if isinstance(descriptors, str):
        descriptors = {"default": descriptors}
    default = descriptors.get("default")
    unknown = set(descriptors) - set(ROLES) - {"default"}
    if unknown:
        raise ConfigError(f"unknown backend roles: {sorted(unknown)}")
    handles = {}
    for role in ROLES[:-1]:
        desc = descriptors.get(role, default)
        if desc is None:
            raise ConfigError(f"no backend descriptor for role {role!r}")
        handles[role] = _build(role, desc)
    itm = descriptors.get("itm_scorer")
    if itm is None or itm.startswith("mock:") or itm == "cosine":
        handles["itm_scorer"] = EmbeddingItmScorer(handles["text_encoder"], handles["image_encoder"])
    else:
        handles["itm_scorer"] = _build("itm_scorer", itm)
    return BackendSuite(**handles)
