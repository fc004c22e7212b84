"""Manifests, training mixes, splits and human-annotation ingestion.

Manifests are JSON Lines.  The first line is a header carrying
``schema_version`` and ``source_descriptor``; each further line is one
record tagged with ``type`` (``sample`` or ``counterfactual``).

Random sampling uses numpy's PCG64 generator (a 128-bit-state permuted
congruential generator with 64-bit output) seeded directly with the
integer seed; membership is drawn with ``Generator.permutation`` so any
PCG64 implementation reproduces it.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from cfpipe.errors import (
    ConfigError,
    CoverageError,
    DataError,
    EmptyInput,
    LinkageError,
    SchemaError,
)
from cfpipe.imgen import CounterfactualRecord

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class SampleRecord:
    """One caption-image sample.

    ``kind`` is ``coco`` for original corpus samples and ``counterfactual``
    for generated ones.  Counterfactual samples name their pair in
    ``pair_id`` and their side of it in ``role`` (``original`` when the
    image was generated from the original caption).
    """

    id: str
    caption: str
    image_path: Optional[str] = None
    kind: str = "coco"
    pair_id: Optional[str] = None
    role: Optional[str] = None
    altered_from: Optional[str] = None
    altered_to: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("coco", "counterfactual"):
            raise DataError(f"unknown sample kind {self.kind!r}")
        if self.kind == "counterfactual" and self.role not in ("original", "counterfactual"):
            raise DataError(f"counterfactual sample {self.id!r} needs role original|counterfactual")

    def to_json(self) -> dict:
        d = {"type": "sample", "id": self.id, "caption": self.caption, "image_path": self.image_path,
             "kind": self.kind}
        if self.kind == "counterfactual":
            d.update(pair_id=self.pair_id, role=self.role,
                     altered_from=self.altered_from, altered_to=self.altered_to)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SampleRecord":
        return cls(
            id=str(d["id"]),
            caption=d["caption"],
            image_path=d.get("image_path"),
            kind=d.get("kind", "coco"),
            pair_id=d.get("pair_id"),
            role=d.get("role"),
            altered_from=d.get("altered_from"),
            altered_to=d.get("altered_to"),
        )


Record = Union[SampleRecord, CounterfactualRecord]


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    schema_version: str = SCHEMA_VERSION
    source_descriptor: str = ""

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = sorted(k for k, v in Counter(ids).items() if v > 1)
            raise DataError(f"duplicate record ids: {dup[:5]}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def check_paths(self, base_dir=".") -> None:
        base = Path(base_dir)
        missing = []
        for r in self.records:
            paths = (
                [r.image_path] if isinstance(r, SampleRecord)
                else [r.selected.image_o.path, r.selected.image_c.path]
            )
            missing += [p for p in paths if p is not None and not (base / p).exists()]
        if missing:
            raise DataError(f"{len(missing)} referenced image(s) missing, e.g. {missing[0]}")


def _record_from_json(d: dict) -> Record:
    kind = d.get("type")
    if kind == "sample":
        return SampleRecord.from_json(d)
    if kind == "counterfactual":
        return CounterfactualRecord.from_json(d)
    raise DataError(f"unknown record type {kind!r}")


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"schema_version": manifest.schema_version, "source_descriptor": manifest.source_descriptor}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for r in manifest.records:
            fh.write(json.dumps(r.to_json(), sort_keys=True, ensure_ascii=False) + "\n")


def read_manifest(path) -> Manifest:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open manifest {path}: {exc}") from exc
    with fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SchemaError("manifest is empty (no header)", line=1)
    try:
        header = json.loads(lines[0])["header"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise SchemaError(f"bad manifest header: {exc}", line=1) from None
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"schema version {header.get('schema_version')!r} != {SCHEMA_VERSION!r}", line=1
        )
    records = []
    for n, line in enumerate(lines[1:], start=2):
        try:
            records.append(_record_from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, DataError) as exc:
            raise SchemaError(f"malformed record: {exc}", line=n) from None
    return Manifest(records, header["schema_version"], header.get("source_descriptor", ""))


def read_corpus(path) -> list[SampleRecord]:
    """Caption corpus: JSON Lines with ``id``, ``caption`` and optional ``image_path``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(SampleRecord(id=str(d["id"]), caption=d["caption"], image_path=d.get("image_path")))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise SchemaError(f"bad corpus record: {exc}", line=n) from None
    return out


def counterfactual_samples(records: Iterable[CounterfactualRecord], image_root: str = "") -> list[SampleRecord]:
    """Expand pair-level records into the two linked samples of each pair."""
    out = []
    for r in records:
        sel, pair = r.selected, r.pair
        for role, caption, img in (("original", pair.original, sel.image_o),
                                   ("counterfactual", pair.counterfactual, sel.image_c)):
            path = img.path
            if path is not None and image_root:
                path = (Path(image_root) / path).as_posix()
            out.append(SampleRecord(
                id=f"{pair.source_id}/{'orig' if role == 'original' else 'cf'}",
                caption=caption, image_path=path, kind="counterfactual",
                pair_id=pair.source_id, role=role,
                altered_from=pair.altered_from, altered_to=pair.altered_to,
            ))
    return out


# --- mixes -----------------------------------------------------------------


def round_half_up(x) -> int:
    x = Fraction(x)
    return math.floor(x + Fraction(1, 2))


def _fraction(value: float) -> Fraction:
    # str() keeps 0.75 as 3/4 rather than the binary approximation
    return Fraction(str(value))


@dataclass(frozen=True)
class MixSpec:
    """Recipe for a training mix of corpus samples and counterfactual samples.

    ``cf_unit`` says what the counterfactual fraction counts: whole pairs
    (``pair``) or individual samples (``record``).  Record-unit sampling
    still takes complete pairs wherever it can; only an odd target leaves
    one sample without its partner.
    """

    name: str = "custom"
    coco_fraction: float = 1.0
    cf_pair_fraction: float = 1.0
    seed: int = 0
    cf_unit: str = "pair"
    expected_total: Optional[int] = None

    def __post_init__(self):
        if self.name not in ("base", "medium", "all", "custom"):
            raise ConfigError(f"unknown mix name {self.name!r}")
        for f in (self.coco_fraction, self.cf_pair_fraction):
            if not 0.0 <= f <= 1.0:
                raise ConfigError(f"mix fractions must lie in [0, 1], got {f}")
        if self.cf_unit not in ("pair", "record"):
            raise ConfigError(f"cf_unit must be pair|record, got {self.cf_unit!r}")
        preset = MIX_PRESETS.get(self.name)
        if preset and (self.coco_fraction, self.cf_pair_fraction) != preset[:2]:
            raise ConfigError(f"mix {self.name!r} requires fractions {preset[:2]}")

    @classmethod
    def preset(cls, name: str, seed: int = 0) -> "MixSpec":
        coco, cf, unit = MIX_PRESETS[name]
        return cls(name=name, coco_fraction=coco, cf_pair_fraction=cf, seed=seed, cf_unit=unit)


# base samples whole pairs (4,353 pairs = 8,706 samples); medium samples
# individual counterfactual samples (26,115 = 75% of 34,820, an odd number)
MIX_PRESETS = {
    "base": (0.5, 0.25, "pair"),
    "medium": (1.0, 0.75, "record"),
    "all": (1.0, 1.0, "pair"),
}


def group_pairs(records: Sequence[SampleRecord]) -> dict[str, list[SampleRecord]]:
    groups: dict[str, list[SampleRecord]] = defaultdict(list)
    for r in records:
        groups[r.pair_id].append(r)
    for pid, members in groups.items():
        roles = sorted(m.role for m in members)
        if roles != ["counterfactual", "original"]:
            raise LinkageError(f"pair {pid!r} has members with roles {roles}")
    return groups


def _sample_indices(rng: np.random.Generator, n: int, k: int) -> list[int]:
    return sorted(int(i) for i in rng.permutation(n)[:k])


def build_mix(spec: MixSpec, coco: Manifest, cfs: Manifest) -> Manifest:
    """Sample corpus and counterfactual records into one training mix.

    Counts round half up.  Output keeps input order: selected corpus
    samples first, then selected counterfactual samples.
    """
    cf_samples = [r for r in cfs.records if isinstance(r, SampleRecord)]
    if len(cf_samples) != len(cfs.records):
        cf_samples = counterfactual_samples(cfs.records)
    for r in cf_samples:
        if r.kind != "counterfactual" or r.pair_id is None:
            raise LinkageError(f"record {r.id!r} carries no pair linkage")
    groups = group_pairs(cf_samples)
    pair_ids = sorted(groups)

    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n_coco = round_half_up(_fraction(spec.coco_fraction) * len(coco.records))
    coco_idx = _sample_indices(rng, len(coco.records), n_coco)

    if spec.cf_unit == "pair":
        n_pairs = round_half_up(_fraction(spec.cf_pair_fraction) * len(pair_ids))
        chosen = [pair_ids[i] for i in _sample_indices(rng, len(pair_ids), n_pairs)]
        orphan = None
    else:
        n_records = round_half_up(_fraction(spec.cf_pair_fraction) * len(cf_samples))
        order = [pair_ids[int(i)] for i in rng.permutation(len(pair_ids))]
        chosen = sorted(order[: n_records // 2])
        orphan = order[n_records // 2] if n_records % 2 else None
    chosen_set = set(chosen)
    picked = []
    for r in cf_samples:
        if r.pair_id in chosen_set:
            picked.append(r)
        elif r.pair_id == orphan and r.role == "original":
            picked.append(r)

    out = Manifest(
        [coco.records[i] for i in coco_idx] + picked,
        source_descriptor=f"mix:{spec.name}:coco={spec.coco_fraction}:cf={spec.cf_pair_fraction}:"
        f"unit={spec.cf_unit}:seed={spec.seed}",
    )
    if spec.expected_total is not None and len(out) != spec.expected_total:
        raise DataError(f"mix has {len(out)} records, expected {spec.expected_total}")
    return out


def split_train_val(manifest: Manifest, train_fraction: float = 0.8, seed: int = 0) -> tuple[Manifest, Manifest]:
    """Pair-atomic random split.

    Units (a whole counterfactual pair, or a lone sample) are shuffled and
    greedily assigned to train until it holds round-half-up(fraction * N)
    records; both sides keep manifest order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be strictly between 0 and 1, got {train_fraction}")
    units: dict[str, list[int]] = {}
    for i, r in enumerate(manifest.records):
        key = f"pair:{r.pair_id}" if isinstance(r, SampleRecord) and r.pair_id else f"rec:{r.id}"
        units.setdefault(key, []).append(i)
    keys = list(units)
    target = round_half_up(_fraction(train_fraction) * len(manifest))
    rng = np.random.Generator(np.random.PCG64(seed))
    train_idx: set[int] = set()
    for j in rng.permutation(len(keys)):
        members = units[keys[int(j)]]
        if len(train_idx) + len(members) <= target:
            train_idx.update(members)
    train = [r for i, r in enumerate(manifest.records) if i in train_idx]
    val = [r for i, r in enumerate(manifest.records) if i not in train_idx]
    desc = manifest.source_descriptor
    return (
        Manifest(train, manifest.schema_version, f"{desc}|train:{train_fraction}:{seed}"),
        Manifest(val, manifest.schema_version, f"{desc}|val:{train_fraction}:{seed}"),
    )


# --- annotations -------------------------------------------------------------

LABELS = ("original", "counterfactual", "both", "neither")
ORIGINS = ("from_original_caption", "from_counterfactual_caption")
_ORIGIN_LABEL = {"from_original_caption": "original", "from_counterfactual_caption": "counterfactual"}


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    label: str
    annotator_id: str
    image_origin: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"unknown label {self.label!r}")
        if self.image_origin not in ORIGINS:
            raise DataError(f"unknown image_origin {self.image_origin!r}")

    @property
    def outcome(self) -> str:
        """correct / incorrect / neither / both."""
        if self.label in ("both", "neither"):
            return self.label
        return "correct" if self.label == _ORIGIN_LABEL[self.image_origin] else "incorrect"


def ingest_annotations(path) -> list[AnnotationRecord]:
    path = Path(path)
    fields = ("image_id", "label", "annotator_id", "image_origin")
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            if path.suffix.lower() == ".csv":
                rows = [(n, row) for n, row in enumerate(csv.DictReader(fh), start=2)]
            elif path.suffix.lower() in (".jsonl", ".json"):
                rows = []
                for n, line in enumerate(fh, start=1):
                    if line.strip():
                        try:
                            rows.append((n, json.loads(line)))
                        except json.JSONDecodeError as exc:
                            raise SchemaError(f"invalid JSON: {exc}", line=n) from None
            else:
                raise SchemaError(f"unsupported annotation format {path.suffix!r} (use .csv or .jsonl)")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    out, bad, seen, dups = [], [], {}, []
    for n, row in rows:
        try:
            rec = AnnotationRecord(*(str(row[f]).strip() for f in fields))
        except (KeyError, TypeError, DataError) as exc:
            bad.append(f"row {n}: {exc}")
            continue
        key = (rec.image_id, rec.annotator_id)
        if key in seen:
            dups.append(f"rows {seen[key]} and {n}: image {rec.image_id!r} annotator {rec.annotator_id!r}")
        seen.setdefault(key, n)
        out.append(rec)
    if bad:
        raise SchemaError(f"{len(bad)} invalid annotation row(s): " + "; ".join(bad[:10]))
    if dups:
        raise SchemaError(f"{len(dups)} duplicate (image_id, annotator_id) pair(s): " + "; ".join(dups[:10]))
    return out


OUTCOMES = ("correct", "incorrect", "neither", "both")


@dataclass(frozen=True)
class AnnotationSummary:
    """Outcome percentages per image origin and overall (``all``).

    Each row maps outcome -> percentage of annotation labels in that row.
    """

    rows: dict
    counts: dict

    def row(self, name: str) -> tuple[float, float, float, float]:
        r = self.rows[name]
        return tuple(r[o] for o in OUTCOMES)

    def to_json(self) -> dict:
        return {"rows": self.rows, "counts": self.counts}


def summarize_annotations(records: Sequence[AnnotationRecord]) -> AnnotationSummary:
    if not records:
        raise EmptyInput("no annotation records to summarize")
    counts = {name: Counter() for name in (*ORIGINS, "all")}
    for r in records:
        counts[r.image_origin][r.outcome] += 1
        counts["all"][r.outcome] += 1
    rows = {}
    for name, c in counts.items():
        total = sum(c.values())
        if total:
            rows[name] = {o: 100.0 * c[o] / total for o in OUTCOMES}
    return AnnotationSummary(rows, {k: {o: v[o] for o in OUTCOMES} for k, v in counts.items()})


def image_verdicts(records: Iterable[AnnotationRecord]) -> dict[str, bool]:
    """image_id -> True when a strict majority of its labels are correct."""
    tally: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for r in records:
        t = tally[r.image_id]
        t[0] += r.outcome == "correct"
        t[1] += 1
    return {k: 2 * ok > n for k, (ok, n) in tally.items()}


def filter_human_correct(cfs: Manifest, records: Sequence[AnnotationRecord]) -> Manifest:
    """Keep counterfactual samples whose image the annotators matched correctly."""
    verdicts = image_verdicts(records)
    ids = {r.id for r in cfs.records}
    missing = [i for i in ids if i not in verdicts]
    if missing:
        raise CoverageError(f"{len(missing)} manifest image(s) lack annotations, e.g. {sorted(missing)[0]!r}")
    unmatched = sum(1 for k in verdicts if k not in ids)
    if unmatched:
        log.warning("ignored annotations for %d image id(s) not in the manifest", unmatched)
    return Manifest(
        [r for r in cfs.records if verdicts[r.id]],
        cfs.schema_version,
        f"{cfs.source_descriptor}|human_correct",
    )
