"""Tokenization and part-of-speech tagging for caption editing.

Token spans are reported as UTF-8 byte offsets so that caption edits splice
at byte level, independent of how the host language indexes strings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Protocol, Sequence

from cfpipe.errors import TaggerError

_TOKEN_RE = re.compile(r"[^\W_]+(?:['’\-][^\W_]+)*|\S")

NOUN_TAGS = frozenset({"NN", "NNS", "NNP", "NNPS"})


@dataclass(frozen=True)
class Token:
    text: str
    start: int  # byte offset
    end: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        start = len(text[: m.start()].encode("utf-8"))
        tokens.append(Token(m.group(), start, start + len(m.group().encode("utf-8"))))
    return tokens


def words(text: str) -> list[str]:
    return [t.text for t in tokenize(text)]


def splice(text: str, start: int, end: int, replacement: str) -> str:
    raw = text.encode("utf-8")
    return (raw[:start] + replacement.encode("utf-8") + raw[end:]).decode("utf-8")


def byte_slice(text: str, start: int, end: int) -> str:
    return text.encode("utf-8")[start:end].decode("utf-8")


class Tagger(Protocol):
    def tag(self, tokens: Sequence[str]) -> list[str]:
        """Penn Treebank tag for every token."""


_CLOSED = {
    "DT": "a an the this that these those some any each every no another all both either neither",
    "IN": "on in at of with by from into onto over under near next beside behind above below "
    "across through for about around along against between among during toward towards "
    "while after before inside outside like as up down off out upon via",
    "CC": "and or but nor yet so",
    "PRP": "he she it they we you i him her them us me",
    "PRP$": "his its their our your my",
    "TO": "to",
    "RB": "very not too also there here together just still away back only",
    "EX": "",
    "WDT": "which what whose",
    "WP": "who whom",
    "WRB": "where when how why",
    "MD": "can could will would should may might must",
}

_VERBS = {
    "VBZ": "is has does sits stands runs walks rides holds eats lies looks flies plays "
    "carries waits goes sleeps takes makes uses wears shows leans rests hangs grazes "
    "jumps swims drives parks lays covers",
    "VBP": "are have do",
    "VBD": "was were had did sat stood ran walked rode held ate lay looked flew played "
    "carried waited went slept took made used wore showed leaned rested hung grazed "
    "jumped swam drove parked laid covered",
    "VBN": "been seen taken eaten driven ridden flown worn shown hung filled topped "
    "parked stacked loaded covered surrounded",
    "VB": "be sit stand run walk ride hold eat look fly play carry wait go sleep take "
    "make use wear show lean rest hang graze jump swim drive park",
}

_ADJECTIVES = (
    "big small large little tall short long old young new red blue green yellow white "
    "black brown gray grey orange pink purple dark bright open empty full wooden "
    "several many few other same different hot cold wet dry busy clean dirty "
    "happy sad pretty beautiful huge tiny colorful fresh single double"
)

# -ing words that are usually nouns in captions
_ING_NOUNS = "building ceiling clothing painting sign ring king wing string evening morning"

_NUMBERS = "one two three four five six seven eight nine ten dozen"


def _table() -> dict[str, str]:
    table = {}
    for tags in (_VERBS, _CLOSED):
        for tag, words_ in tags.items():
            for w in words_.split():
                table.setdefault(w, tag)
    for w in _ADJECTIVES.split():
        table.setdefault(w, "JJ")
    for w in _NUMBERS.split():
        table.setdefault(w, "CD")
    for w in _ING_NOUNS.split():
        table[w] = "NN"
    return table


class LexiconTagger:
    """Deterministic rule-and-lexicon POS tagger.

    Closed-class words, a verb list, adjectives and numerals come from a
    fixed lexicon; remaining words fall back on suffix rules and default to
    noun.  A verb form directly after a determiner or adjective is read as a
    noun ("a walk", "the old stands").  Good enough for caption-shaped text;
    swap in NltkTagger for the reference tagger when its data is installed.
    """

    def __init__(self, extra: dict[str, str] | None = None):
        self.table = _table()
        if extra:
            self.table.update({k.lower(): v for k, v in extra.items()})

    def tag(self, tokens: Sequence[str]) -> list[str]:
        tags: list[str] = []
        for i, tok in enumerate(tokens):
            tags.append(self._tag_one(tok, tags[i - 1] if i else None))
        return tags

    def _tag_one(self, tok: str, prev: str | None) -> str:
        if not tok:
            raise TaggerError("cannot tag an empty token")
        w = tok.lower()
        if not any(ch.isalnum() for ch in w):
            return "." if w in ".!?" else ","
        if w.replace(".", "", 1).replace(",", "").isdigit():
            return "CD"
        after_modifier = prev in ("DT", "JJ", "PRP$", "CD")
        tag = self.table.get(w)
        if tag is not None:
            if tag.startswith("VB") and after_modifier and tag != "VBN":
                return "NNS" if w.endswith("s") else "NN"
            return tag
        if w.endswith("ly"):
            return "RB"
        if prev in ("NN", "NNS", "NNP", "NNPS") and w.isalpha():
            # "a dog chases", "dogs play"
            if w.endswith("s") and not w.endswith(("ss", "us", "is")):
                return "VBZ"
            if prev in ("NNS", "NNPS") and not w.endswith("ing"):
                return "VBP"
        if w.endswith("ing"):
            return "NN" if after_modifier else "VBG"
        if w.endswith("ed") and not after_modifier:
            return "VBD"
        if w.endswith(("ous", "ful", "ive", "able", "ible", "ish")):
            return "JJ"
        if w.endswith("s") and not w.endswith(("ss", "us", "is")) and len(w) > 3:
            return "NNS"
        return "NN"


class NltkTagger:
    """Adapter for NLTK's averaged perceptron tagger (optional dependency)."""

    def __init__(self):
        try:
            import nltk
        except ImportError as exc:
            raise TaggerError("nltk is not installed") from exc
        self._nltk = nltk

    def tag(self, tokens: Sequence[str]) -> list[str]:
        try:
            return [t for _, t in self._nltk.pos_tag(list(tokens))]
        except LookupError as exc:
            raise TaggerError(f"nltk tagger data unavailable: {exc}") from exc


def get_tagger(name: str = "lexicon") -> Tagger:
    if name == "lexicon":
        return LexiconTagger()
    if name == "nltk":
        return NltkTagger()
    raise TaggerError(f"unknown tagger {name!r}")
