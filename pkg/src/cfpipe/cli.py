"""Command-line entry point: one subcommand per pipeline stage.

Settings resolve in three layers: a flat config file (JSON, YAML or
``key = value`` lines), then ``CFPIPE_*`` environment variables (``.`` in a
key becomes ``__``, e.g. ``CFPIPE_BACKENDS__MLM``), then explicit flags.
Every command writes a ``<output>.report.json`` run report beside its main
output.

Exit codes: 0 success, 2 usage error, 3 data error, 4 backend error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from cfpipe.backends import ROLES, ImageRef, ImageSource, load_suite
from cfpipe.capgen import CaptionGenConfig, CaptionPair, StageLog, make_counterfactual
from cfpipe.dataset import (
    LABELS,
    Manifest,
    MixSpec,
    SampleRecord,
    build_mix,
    counterfactual_samples,
    filter_human_correct,
    ingest_annotations,
    read_corpus,
    read_manifest,
    split_train_val,
    summarize_annotations,
    write_manifest,
)
from cfpipe.errors import CfPipeError, ConfigError, DataError, SchemaError, UsageError
from cfpipe.eval import (
    HUMAN_WORDS,
    ItmTuple,
    diff_histogram,
    fleiss_kappa,
    format_rate,
    itm_diffs,
    label_frequency,
    one_tailed_t_test,
    pearson_with_p,
    ratings_matrix,
    recall_from_scores,
    score_matrix,
    taxonomy_error_rate,
)
from cfpipe.eval.retrieval import cosine_matrix
from cfpipe.imgen import CounterfactualRecord, GenerationConfig, generate_record, write_record_images
from cfpipe.text import get_tagger

log = logging.getLogger("cfpipe")

COMMANDS = (
    "gen-captions", "gen-images", "build-dataset", "build-mix", "split", "ingest-annotations",
    "eval-retrieval", "eval-itm", "eval-agreement", "analyze-labels", "report",
)

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "backend": "mock:16:0",
    "tagger": "lexicon",
    "top_k": 10,
    "sim_low": 0.8,
    "sim_high": 0.91,
    "mask_placeholder": "<mask>",
    "n_candidates": 100,
    "p_low": 0.1,
    "p_high": 0.9,
    "min_caption_image_sim": 0.2,
    "min_image_image_sim": 0.7,
    "train_fraction": 0.8,
    "ttest": "welch",
    "bins": 40,
}

ENV_PREFIX = "CFPIPE_"


# --- config -----------------------------------------------------------------


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".json":
        data = json.loads(text)
    elif p.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = {}
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            data[k] = v.strip("\"'")
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise ConfigError(f"{path}: config must be a flat key-value document")
    return data


def env_config(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    return {
        k[len(ENV_PREFIX):].lower().replace("__", "."): v
        for k, v in environ.items()
        if k.startswith(ENV_PREFIX)
    }


def _coerce(key: str, value):
    default = DEFAULTS.get(key)
    if value is None or default is None or isinstance(value, type(default)):
        return value
    try:
        return type(default)(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def resolve_settings(args: argparse.Namespace, environ=None) -> dict:
    settings = dict(DEFAULTS)
    settings.update(load_config(getattr(args, "config", None)))
    settings.update(env_config(environ))
    for k, v in vars(args).items():
        if v is not None and k not in ("func", "config"):
            settings[k.replace("-", "_")] = v
    return {k: _coerce(k, v) for k, v in settings.items()}


def backend_descriptors(settings: dict) -> dict:
    desc = {"default": settings["backend"]}
    for role in ROLES:
        key = f"backends.{role}"
        if key in settings:
            desc[role] = settings[key]
    return desc


# --- run report ---------------------------------------------------------------


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunReport:
    def __init__(self, command: str, settings: dict):
        self.command = command
        self.settings = {k: v for k, v in settings.items() if isinstance(v, (str, int, float, bool, list))}
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.processed = 0
        self.succeeded = 0
        self.rejected: Counter = Counter()
        self.extra: dict = {}
        self._t0 = time.perf_counter()

    def add_input(self, path) -> None:
        self.inputs[str(path)] = file_hash(path)

    def reject(self, reason: str, n: int = 1) -> None:
        if n:
            self.rejected[reason] += n

    def to_json(self) -> dict:
        if self.processed != self.succeeded + sum(self.rejected.values()):
            raise AssertionError("run report counts do not close")
        blob = json.dumps(self.settings, sort_keys=True, default=str).encode()
        return {
            "command": self.command,
            "config_hash": hashlib.sha256(blob).hexdigest(),
            "settings": self.settings,
            "inputs": self.inputs,
            "counts": {
                "processed": self.processed,
                "succeeded": self.succeeded,
                "rejected": dict(sorted(self.rejected.items())),
            },
            "wall_time_s": round(time.perf_counter() - self._t0, 3),
            "outputs": self.outputs,
            **self.extra,
        }

    def write(self, main_output) -> Path:
        path = Path(f"{main_output}.report.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return path


def _require(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing {what}")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _timestamp(settings) -> str:
    if settings.get("timestamp"):
        return settings["timestamp"]
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return now.isoformat(timespec="seconds")


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --- commands ----------------------------------------------------------------


def cmd_gen_captions(s: dict, report: RunReport):
    src = _require(s.get("input"), "--in corpus")
    report.add_input(src)
    corpus = read_corpus(src)
    suite = load_suite(backend_descriptors(s))
    if s["workers"] > 1:
        suite = suite.for_workers()
    cfg = CaptionGenConfig(top_k=s["top_k"], sim_low=s["sim_low"], sim_high=s["sim_high"],
                           mask_placeholder=s["mask_placeholder"])
    tagger = get_tagger(s["tagger"])

    def one(rec: SampleRecord):
        lg = StageLog()
        try:
            pair = make_counterfactual(rec.caption, cfg, suite, source_id=rec.id, tagger=tagger, log_=lg)
        except CfPipeError as exc:
            return rec.id, None, lg.reason or f"error:{type(exc).__name__}"
        return rec.id, pair, lg.reason

    results = _map(one, corpus, s["workers"])
    report.processed = len(results)
    pairs = []
    for _, pair, reason in results:
        if pair is None:
            report.reject(reason or "unknown")
        else:
            pairs.append(pair)
    pairs.sort(key=lambda p: p.source_id)
    report.succeeded = len(pairs)
    out = Path(s["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_json(), sort_keys=True, ensure_ascii=False) + "\n")
    report.outputs.append(str(out))
    return out


def read_pairs(path) -> list[CaptionPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    pairs.append(CaptionPair.from_json(json.loads(line)))
                except (json.JSONDecodeError, KeyError, TypeError, DataError) as exc:
                    raise SchemaError(f"bad caption pair: {exc}", line=n) from None
    return pairs


def cmd_gen_images(s: dict, report: RunReport):
    src = _require(s.get("input"), "--in caption pairs")
    report.add_input(src)
    pairs = read_pairs(src)
    suite = load_suite(backend_descriptors(s))
    if s["workers"] > 1:
        suite = suite.for_workers()
    cfg = GenerationConfig(n_candidates=s["n_candidates"], p_low=s["p_low"], p_high=s["p_high"],
                           min_caption_image_sim=s["min_caption_image_sim"],
                           min_image_image_sim=s["min_image_image_sim"], seed=s["seed"])
    out_dir = Path(s["out"])
    stamp = _timestamp(s)

    def one(pair):
        try:
            rec = generate_record(pair, cfg, suite, created_at=stamp)
        except CfPipeError as exc:
            return None, f"error:{type(exc).__name__}"
        if rec is None:
            return None, "no_candidate_passed_filters"
        return write_record_images(rec, out_dir), None

    results = _map(one, pairs, s["workers"])
    report.processed = len(results)
    records = []
    for rec, reason in results:
        if rec is None:
            report.reject(reason)
        else:
            records.append(rec)
    records.sort(key=lambda r: r.id)
    report.succeeded = len(records)
    manifest = out_dir / "manifest.jsonl"
    write_manifest(Manifest(records, source_descriptor=suite.descriptor), manifest)
    report.outputs.append(str(manifest))
    return manifest


def _relocate(path: Optional[str], from_dir: Path, to_dir: Path) -> Optional[str]:
    if path is None:
        return None
    p = Path(path)
    if not p.is_absolute():
        p = from_dir / p
    return Path(os.path.relpath(p.resolve(), to_dir.resolve())).as_posix()


def cmd_build_dataset(s: dict, report: RunReport):
    src = _require(s.get("input"), "--in counterfactual record manifest")
    report.add_input(src)
    records = read_manifest(src)
    out = Path(s["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    samples = [
        SampleRecord(**{**r.__dict__, "image_path": _relocate(r.image_path, src.parent, out.parent)})
        for r in counterfactual_samples(r for r in records if isinstance(r, CounterfactualRecord))
    ]
    report.processed = len(records)
    report.succeeded = sum(isinstance(r, CounterfactualRecord) for r in records)
    report.reject("not_a_counterfactual_record", report.processed - report.succeeded)
    write_manifest(Manifest(samples, source_descriptor=f"cf-samples:{records.source_descriptor}"), out)
    report.outputs.append(str(out))
    if s.get("corpus"):
        corpus_path = _require(s["corpus"], "--corpus")
        report.add_input(corpus_path)
        keep = {r.id for r in records}
        coco = [
            SampleRecord(id=r.id, caption=r.caption,
                         image_path=_relocate(r.image_path, corpus_path.parent, out.parent))
            for r in read_corpus(corpus_path) if r.id in keep
        ]
        coco_out = Path(s.get("coco_out") or out.with_name("coco.jsonl"))
        write_manifest(Manifest(coco, source_descriptor="coco-subset"), coco_out)
        report.outputs.append(str(coco_out))
    return out


def _manifest_or_corpus(path: Path) -> Manifest:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        is_manifest = "header" in json.loads(first)
    except json.JSONDecodeError:
        is_manifest = False
    return read_manifest(path) if is_manifest else Manifest(read_corpus(path))


def cmd_build_mix(s: dict, report: RunReport):
    coco_p = _require(s.get("coco"), "--coco manifest")
    cfs_p = _require(s.get("cfs"), "--cfs manifest")
    for p in (coco_p, cfs_p):
        report.add_input(p)
    coco, cfs = _manifest_or_corpus(coco_p), read_manifest(cfs_p)
    if s.get("mix") in (None, "custom"):
        spec = MixSpec(name="custom", coco_fraction=float(s.get("coco_fraction", 1.0)),
                       cf_pair_fraction=float(s.get("cf_fraction", 1.0)), seed=s["seed"],
                       cf_unit=s.get("cf_unit") or "pair")
    else:
        spec = MixSpec.preset(s["mix"], seed=s["seed"])
    mixed = build_mix(spec, coco, cfs)
    report.processed = report.succeeded = len(mixed)
    report.extra["mix"] = {
        "name": spec.name, "total": len(mixed),
        "coco": sum(getattr(r, "kind", "") == "coco" for r in mixed),
        "counterfactual": sum(getattr(r, "kind", "") == "counterfactual" for r in mixed),
    }
    out = Path(s["out"])
    write_manifest(mixed, out)
    report.outputs.append(str(out))
    return out


def cmd_split(s: dict, report: RunReport):
    src = _require(s.get("input"), "--in manifest")
    report.add_input(src)
    m = read_manifest(src)
    train, val = split_train_val(m, s["train_fraction"], s["seed"])
    out = Path(s["out"])
    train_p, val_p = out.with_name(out.stem + ".train.jsonl"), out.with_name(out.stem + ".val.jsonl")
    write_manifest(train, train_p)
    write_manifest(val, val_p)
    report.processed = report.succeeded = len(m)
    report.extra["split"] = {"train": len(train), "val": len(val)}
    report.outputs += [str(train_p), str(val_p)]
    return out


def cmd_ingest_annotations(s: dict, report: RunReport):
    src = _require(s.get("input"), "--in labels file")
    report.add_input(src)
    records = ingest_annotations(src)
    summary = summarize_annotations(records)
    report.processed = report.succeeded = len(records)
    out = Path(s["out"])
    _write_json(out, {"n_records": len(records), **summary.to_json()})
    report.outputs.append(str(out))
    if s.get("manifest"):
        mp = _require(s["manifest"], "--manifest")
        report.add_input(mp)
        m = read_manifest(mp)
        kept = filter_human_correct(m, records)
        fout = Path(s.get("filtered_out") or out.with_name(mp.stem + ".human_correct.jsonl"))
        write_manifest(kept, fout)
        report.extra["human_correct"] = {"kept": len(kept), "of": len(m)}
        report.outputs.append(str(fout))
    return out


def _load_image(path: Optional[str], base: Path, rid: str) -> ImageRef:
    if path is None:
        raise DataError(f"record {rid!r} has no image path")
    p = Path(path)
    return ImageRef(id=rid, path=str(p if p.is_absolute() else base / p), source=ImageSource.ORIGINAL)


def cmd_eval_retrieval(s: dict, report: RunReport):
    src = _require(s.get("input"), "--in sample manifest")
    report.add_input(src)
    m = _manifest_or_corpus(src)
    samples = [r for r in m if isinstance(r, SampleRecord)]
    suite = load_suite(backend_descriptors(s))
    images = [_load_image(r.image_path, src.parent, r.id) for r in samples]
    captions = [r.caption for r in samples]
    gold = list(range(len(samples)))
    if s.get("scorer") == "itm":
        reports = [
            recall_from_scores(score_matrix(suite.itm_scorer, captions, images, d), gold, direction=d)
            for d in ("text_retrieval", "image_retrieval")
        ]
    else:
        t = [suite.text_encoder.encode_text(c) for c in captions]
        i = [suite.image_encoder.encode_image(im) for im in images]
        reports = [
            recall_from_scores(cosine_matrix(i, t), gold, direction="text_retrieval"),
            recall_from_scores(cosine_matrix(t, i), gold, direction="image_retrieval"),
        ]
    report.processed = report.succeeded = len(samples)
    out = Path(s["out"])
    _write_json(out, {"reports": [r.to_json() for r in reports]})
    report.outputs.append(str(out))
    return out


def cmd_eval_itm(s: dict, report: RunReport):
    src = _require(s.get("input"), "--in counterfactual record manifest")
    corpus_p = _require(s.get("corpus"), "--corpus with original images")
    for p in (src, corpus_p):
        report.add_input(p)
    records = [r for r in read_manifest(src) if isinstance(r, CounterfactualRecord)]
    coco = [r for r in _manifest_or_corpus(corpus_p) if isinstance(r, SampleRecord)]
    by_id = {r.id: r for r in coco}
    suite = load_suite(backend_descriptors(s))
    rng = np.random.Generator(np.random.PCG64(s["seed"]))
    tuples = []
    report.processed = len(records)
    for rec in records:
        orig = by_id.get(rec.id)
        others = [r for r in coco if r.id != rec.id and r.image_path != getattr(orig, "image_path", None)]
        if orig is None or not others:
            report.reject("no_original_or_random_pair")
            continue
        rand = others[int(rng.integers(len(others)))]
        sel = rec.selected
        tuples.append(ItmTuple(
            c_o=rec.pair.original,
            i_o=_load_image(orig.image_path, corpus_p.parent, f"coco:{orig.id}"),
            i_o_s=_load_image(sel.image_o.path, src.parent, f"{rec.id}/orig"),
            c_c=rec.pair.counterfactual,
            i_c_s=_load_image(sel.image_c.path, src.parent, f"{rec.id}/cf"),
            c_r=rand.caption,
            i_r=_load_image(rand.image_path, corpus_p.parent, f"coco:{rand.id}"),
        ))
    samples = itm_diffs(tuples, suite.itm_scorer)
    report.succeeded = len(samples.ir_cf)
    report.reject("scoring_failed", len(samples.skipped))
    hist = diff_histogram(samples, s["bins"]) if samples.ir_cf else None
    out = Path(s["out"])
    _write_json(out, {
        "samples": samples.to_json(),
        "frac_below_zero": hist.frac_below_zero if hist else {},
        "n_tuples": len(samples.ir_cf),
    })
    report.outputs.append(str(out))
    return out


def cmd_eval_agreement(s: dict, report: RunReport):
    src = _require(s.get("input"), "--in labels file")
    report.add_input(src)
    records = ingest_annotations(src)
    matrix, ids = ratings_matrix(records, LABELS, s.get("n_raters"))
    agreement = fleiss_kappa(matrix, LABELS)
    report.processed = report.succeeded = len(ids)
    out = Path(s["out"])
    _write_json(out, agreement.to_json())
    report.outputs.append(str(out))
    return out


def _read_json(path):
    with open(_require(path, "JSON input"), encoding="utf-8") as fh:
        return json.load(fh)


def cmd_analyze_labels(s: dict, report: RunReport):
    src = _require(s.get("cfs"), "--cfs manifest")
    report.add_input(src)
    cfs = read_manifest(src)
    result: dict = {}
    if s.get("label_sets"):
        report.add_input(s["label_sets"])
        sets = _read_json(s["label_sets"])
        freq = {name: label_frequency(cfs, labels) for name, labels in sorted(sets.items())}
        result["label_frequency"] = freq
        if s.get("deltas"):
            report.add_input(s["deltas"])
            deltas = _read_json(s["deltas"])
            xs, ys = [], []
            for name in sorted(deltas):
                vals = deltas[name] if isinstance(deltas[name], list) else [deltas[name]]
                xs += [freq[name]] * len(vals)
                ys += vals
            r, p = pearson_with_p(xs, ys)
            result["pearson"] = {"r": r, "p_value": p, "n": len(xs)}
    if s.get("annotations"):
        report.add_input(s["annotations"])
        words = HUMAN_WORDS
        if s.get("words"):
            words = [w.strip() for w in Path(s["words"]).read_text().split() if w.strip()]
        matched, errors, rate = taxonomy_error_rate(ingest_annotations(s["annotations"]), cfs, words)
        result["taxonomy"] = {"matched": matched, "errors": errors, "rate": rate,
                              "rate_display": format_rate(rate)}
    if not result:
        raise UsageError("analyze-labels needs --label-sets and/or --annotations")
    report.processed = report.succeeded = len(cfs)
    out = Path(s["out"])
    _write_json(out, result)
    report.outputs.append(str(out))
    return out


def cmd_report(s: dict, report: RunReport):
    from cfpipe.plots import emit_plots

    out = Path(s["out"])
    itm = s.get("itm") or []
    for p in itm:
        _require(p, "ITM report")
        report.add_input(p)
    result = {}
    if itm:
        files = emit_plots(itm, out, bins=s["bins"])
        report.outputs += [str(f) for f in files]
    if s.get("baseline") or s.get("treatment"):
        base, treat = _read_json(s.get("baseline")), _read_json(s.get("treatment"))
        sig = one_tailed_t_test(base, treat, method=s["ttest"])
        result["significance"] = sig.to_json() | {"significant": sig.significant}
    if not itm and not result:
        raise UsageError("report needs --itm reports and/or --baseline/--treatment")
    report.processed = report.succeeded = len(itm) + bool(result)
    if result:
        _write_json(out / "significance.json", result)
        report.outputs.append(str(out / "significance.json"))
    return out / "report"


HANDLERS = {
    "gen-captions": cmd_gen_captions,
    "gen-images": cmd_gen_images,
    "build-dataset": cmd_build_dataset,
    "build-mix": cmd_build_mix,
    "split": cmd_split,
    "ingest-annotations": cmd_ingest_annotations,
    "eval-retrieval": cmd_eval_retrieval,
    "eval-itm": cmd_eval_itm,
    "eval-agreement": cmd_eval_agreement,
    "analyze-labels": cmd_analyze_labels,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key-value config file (.json, .yaml or key = value)")
    common.add_argument("--seed", type=int)
    common.add_argument("--backend", help="backend descriptor for every role, e.g. mock:16:1")
    common.add_argument("--workers", type=int)
    common.add_argument("--timestamp", help="fixed created_at value for reproducible manifests")
    common.add_argument("--out", required=True)
    common.add_argument("-v", "--verbose", action="store_true", default=None)

    parser = argparse.ArgumentParser(prog="cfpipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    p = add("gen-captions", "counterfactual captions from a caption corpus")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--sim-low", dest="sim_low", type=float)
    p.add_argument("--sim-high", dest="sim_high", type=float)
    p.add_argument("--mask", dest="mask_placeholder")
    p.add_argument("--tagger", choices=("lexicon", "nltk"))

    p = add("gen-images", "over-generate, filter and select image pairs")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--n-candidates", dest="n_candidates", type=int)
    p.add_argument("--p-low", dest="p_low", type=float)
    p.add_argument("--p-high", dest="p_high", type=float)

    p = add("build-dataset", "expand pair records into linked samples")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--corpus", help="original corpus; writes the matching subset too")
    p.add_argument("--coco-out", dest="coco_out")

    p = add("build-mix", "sample a training mix")
    p.add_argument("--mix", choices=("base", "medium", "all", "custom"))
    p.add_argument("--coco", required=True)
    p.add_argument("--cfs", required=True)
    p.add_argument("--coco-fraction", dest="coco_fraction", type=float)
    p.add_argument("--cf-fraction", dest="cf_fraction", type=float)
    p.add_argument("--cf-unit", dest="cf_unit", choices=("pair", "record"))

    p = add("split", "pair-atomic train/validation split")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)

    p = add("ingest-annotations", "validate and summarize human labels")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--manifest", help="counterfactual sample manifest to filter to correct labels")
    p.add_argument("--filtered-out", dest="filtered_out")

    p = add("eval-retrieval", "recall@1/5/10 in both directions")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--scorer", choices=("embedding", "itm"))

    p = add("eval-itm", "ITM score differences against random and counterfactual distractors")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--bins", type=int)

    p = add("eval-agreement", "Fleiss' kappa over multiply annotated images")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--n-raters", dest="n_raters", type=int)

    p = add("analyze-labels", "label frequency, correlation and taxonomy error rate")
    p.add_argument("--cfs", required=True)
    p.add_argument("--label-sets", dest="label_sets", help="JSON {dataset: [labels]}")
    p.add_argument("--deltas", help="JSON {dataset: [performance changes]}")
    p.add_argument("--annotations")
    p.add_argument("--words", help="whitespace-separated word list (default: human words)")

    p = add("report", "plots and significance tests")
    p.add_argument("--itm", nargs="*")
    p.add_argument("--baseline", help="JSON list of baseline scores")
    p.add_argument("--treatment", help="JSON list of treatment scores")
    p.add_argument("--ttest", choices=("welch", "student", "paired"))
    p.add_argument("--bins", type=int)
    return parser


def run(argv: Optional[Sequence[str]] = None, environ=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args, environ)
        report = RunReport(args.command, settings)
        main_out = HANDLERS[args.command](settings, report)
        report.write(main_out)
    except CfPipeError as exc:
        print(f"cfpipe {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"cfpipe {args.command}: I/O error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
