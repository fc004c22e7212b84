"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line (visible even under
output capture) and then asserts, so ``pytest tests/test_acceptance.py -v``
doubles as the acceptance report.
"""

import math
import re
import shutil
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from cfpipe.backends import Embedding, ImageRef, cosine, mock_suite
from cfpipe.backends.base import EmbeddingItmScorer
from cfpipe.capgen import CaptionGenConfig, make_counterfactual
from cfpipe.dataset import (
    AnnotationRecord,
    Manifest,
    MixSpec,
    SampleRecord,
    build_mix,
    summarize_annotations,
)
from cfpipe.errors import DegenerateDirectionError
from cfpipe.eval import (
    HUMAN_WORDS,
    ItmTuple,
    diff_histogram,
    fleiss_kappa,
    format_rate,
    itm_diffs,
    one_tailed_t_test,
    pearson_with_p,
    retrieval_recall,
    taxonomy_error_rate,
)
from cfpipe.imgen import GenerationConfig, generate_record, overgenerate
from cfpipe.capgen import CaptionPair
from cfpipe.text import NOUN_TAGS, LexiconTagger
from pipeline_util import fixture_captions, run_pipeline, snapshot, write_corpus

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail

    return emit


# --- independent oracles ------------------------------------------------------


def oracle_cos(u, v):
    dot = math.fsum(a * b for a, b in zip(u, v))
    return dot / (math.sqrt(math.fsum(a * a for a in u)) * math.sqrt(math.fsum(b * b for b in v)))


def oracle_dir(to, tc, io, ic):
    return oracle_cos([b - a for a, b in zip(to, tc)], [b - a for a, b in zip(io, ic)])


def oracle_recall(q, g, gold, k):
    hits = 0
    for i, a in enumerate(q):
        sims = [oracle_cos(a, b) for b in g]
        order = sorted(range(len(g)), key=lambda j: (-sims[j], j))
        hits += gold[i] in order[:k]
    return hits / len(q)


WORD_RE = re.compile(r"[^\W_]+(?:['’\-][^\W_]+)*|\S")


# --- 1 ------------------------------------------------------------------------


def test_mix_totals(verdict):
    coco = Manifest([SampleRecord(f"c{i}", "x") for i in range(17_410)])
    cfs = Manifest([
        SampleRecord(f"p{i}/{s}", "y", kind="counterfactual", pair_id=f"p{i}", role=r)
        for i in range(17_410) for s, r in (("orig", "original"), ("cf", "counterfactual"))
    ])
    want = {"base": 17_411, "medium": 43_525, "all": 52_230}
    got, t0 = {}, time.perf_counter()
    for name in want:
        got[name] = len(build_mix(MixSpec.preset(name, seed=0), coco, cfs))
    dt = time.perf_counter() - t0
    verdict(1, got == want and dt < 5, f"mix totals {got} (expected {want}) in {dt:.2f}s")


# --- 2 ------------------------------------------------------------------------


def test_clip_dir_fidelity(verdict):
    from cfpipe.imgen import clip_dir

    rng = np.random.default_rng(2)
    quads = rng.standard_normal((1000, 4, 32)) * rng.uniform(0.01, 100, (1000, 1, 1))
    t0 = time.perf_counter()
    worst = max(abs(clip_dir(*q) - oracle_dir(*q)) for q in quads)
    degenerate = 0
    v = rng.standard_normal(32)
    for args in ((v, v, v, v + 1), (v, v + 1, v, v), (v, v + 1e-14, v, v + 1)):
        try:
            clip_dir(*args)
        except DegenerateDirectionError:
            degenerate += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and degenerate == 3 and dt < 1
    verdict(2, ok, f"max |clip_dir - oracle| = {worst:.2e} over 1000 quadruples, "
                   f"{degenerate}/3 degenerate cases raised, {dt:.3f}s")


# --- 3 ------------------------------------------------------------------------


def test_retrieval_oracle(verdict):
    rng = np.random.default_rng(3)
    mismatches = non_monotone = 0
    for _ in range(100):
        n = int(rng.integers(1, 51))
        dim = int(rng.integers(2, 9))
        # coarse values produce exact score ties now and then
        q = rng.integers(-2, 3, (n, dim)).astype(float) + 0.001 * rng.standard_normal((n, dim))
        g = rng.integers(-2, 3, (n, dim)).astype(float)
        g[np.linalg.norm(g, axis=1) == 0, 0] = 1.0
        q[np.linalg.norm(q, axis=1) == 0, 0] = 1.0
        gold = [int(i) for i in rng.permutation(n)]
        rep = retrieval_recall([Embedding(v) for v in q], [Embedding(v) for v in g], gold)
        r = rep.recall_at
        mismatches += any(r[k] != oracle_recall(q, g, gold, k) for k in (1, 5, 10))
        non_monotone += not r[1] <= r[5] <= r[10]
    verdict(3, mismatches == 0 and non_monotone == 0,
            f"{mismatches} oracle mismatches and {non_monotone} monotonicity violations in 100 galleries")


# --- 4 ------------------------------------------------------------------------


def test_itm_fidelity(verdict):
    suite = mock_suite(16, 4)
    scorer = EmbeddingItmScorer(suite.text_encoder, suite.image_encoder)
    rng = np.random.default_rng(4)
    vocab = "cat dog man woman bus train pizza cake horse kite table street beach red small".split()

    def image(tag):
        return ImageRef(tag, rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))

    def caption():
        return " ".join(rng.choice(vocab, int(rng.integers(2, 7))))

    tuples = [ItmTuple(caption(), image(f"o{i}"), image(f"os{i}"), caption(), image(f"cs{i}"),
                       caption(), image(f"r{i}")) for i in range(500)]
    got = itm_diffs(tuples, scorer)
    te, ie = suite.text_encoder.encode_text, suite.image_encoder.encode_image

    def G(c, i):
        return cosine(te(c), ie(i))

    bad = 0
    for j, t in enumerate(tuples):
        want = (G(t.c_r, t.i_r) - G(t.c_r, t.i_o), G(t.c_c, t.i_c_s) - G(t.c_c, t.i_o_s),
                G(t.c_r, t.i_r) - G(t.c_o, t.i_r), G(t.c_c, t.i_c_s) - G(t.c_o, t.i_c_s))
        have = (got.ir_random[j], got.ir_cf[j], got.tr_random[j], got.tr_cf[j])
        bad += any(a.hex() != b.hex() for a, b in zip(have, want))
    hist = diff_histogram(got, bins=20)
    hand = {m: sum(1 for x in getattr(got, m) if x < 0) / 500 for m in hist.frac_below_zero}
    ok = bad == 0 and len(got.ir_cf) == 500 and hist.frac_below_zero == hand
    verdict(4, ok, f"{bad} bitwise mismatches over 500 tuples; fraction below zero {hist.frac_below_zero} "
                   f"vs hand count {hand}")


# --- 5 ------------------------------------------------------------------------

SUBJ = "cat dog man woman horse bus train boy girl pizza car bird table tree kite".split()
ADJ = ["", "big ", "red ", "small ", "old "]
VERB = ["sitting", "standing", "is", "runs", "sat", "parked"]
PLACE = ["on the beach", "in a field", "next to a tree", "on a table", "in the street",
         "near the water", "on the grass", "with a ball", "by a car", "under a bridge"]


def random_corpus(rng, n):
    return [f"A {rng.choice(ADJ)}{rng.choice(SUBJ)} {rng.choice(VERB)} {rng.choice(PLACE)}" for _ in range(n)]


def caption_oracle(caption, suite, cfg, tagger):
    """Brute force: every noun position x every MLM fill, filtered independently."""
    spans = [(m.start(), m.end(), m.group()) for m in WORD_RE.finditer(caption)]
    tags = tagger.tag([s[2] for s in spans])
    survivors = []
    for i, (a, b, surface) in enumerate(spans):
        if tags[i] not in NOUN_TAGS:
            continue
        masked = caption[:a] + cfg.mask_placeholder + caption[b:]
        for fill in suite.mlm.top_k(masked, cfg.top_k):
            repl = fill.token
            if not WORD_RE.fullmatch(repl) or repl.casefold() == surface.casefold():
                continue
            text = caption[:a] + repl + caption[b:]
            new_tags = tagger.tag([m.group() for m in WORD_RE.finditer(text)])
            if new_tags[i] not in NOUN_TAGS:
                continue
            sim = suite.sent_sim.sentence_similarity(caption, text)
            if not 0.8 < sim < 0.91:
                continue
            survivors.append((suite.ppl.perplexity(text), text))
    return survivors


def test_caption_filter_soundness(verdict):
    tagger = LexiconTagger()
    cfg = CaptionGenConfig()
    rng = np.random.default_rng(5)
    emitted = violations = 0
    examples = []
    for trial in range(1000):
        suite = mock_suite(16, int(rng.integers(0, 2**31)))
        for caption in random_corpus(rng, 3):
            pair = make_counterfactual(caption, cfg, suite, tagger=tagger)
            survivors = caption_oracle(caption, suite, cfg, tagger)
            if pair is None:
                if survivors:
                    violations += 1
                    examples.append(("missed", caption))
                continue
            emitted += 1
            o = [m.group() for m in WORD_RE.finditer(pair.original)]
            c = [m.group() for m in WORD_RE.finditer(pair.counterfactual)]
            diff = [i for i, (x, y) in enumerate(zip(o, c)) if x != y] if len(o) == len(c) else None
            checks = [
                diff is not None and len(diff) == 1 and o[diff[0]] == pair.altered_from
                and c[diff[0]] == pair.altered_to,
                0.8 < suite.sent_sim.sentence_similarity(pair.original, pair.counterfactual) < 0.91,
                diff is not None and len(diff) == 1 and tagger.tag(c)[diff[0]] in NOUN_TAGS,
                survivors and suite.ppl.perplexity(pair.counterfactual) == min(p for p, _ in survivors),
            ]
            if not all(checks):
                violations += 1
                examples.append((caption, pair.counterfactual, checks))
    ok = violations == 0 and emitted > 0
    verdict(5, ok, f"{emitted} caption pairs emitted over 1000 random mock corpora, {violations} violations"
                   + (f"; e.g. {examples[:2]}" if examples else ""))


# --- 6 ------------------------------------------------------------------------


def test_image_filter_soundness(verdict):
    rng = np.random.default_rng(6)
    selected = violations = nones = 0
    for run in range(1000):
        suite = mock_suite(16, int(rng.integers(0, 2**31)))
        a, b = rng.choice(SUBJ, 2, replace=False)
        place = rng.choice(PLACE)
        pair = CaptionPair(f"A {a} {place}", f"A {b} {place}", a, b, f"r{run}")
        cfg = GenerationConfig(n_candidates=12, seed=int(rng.integers(0, 10_000)))
        rec = generate_record(pair, cfg, suite, created_at="x")
        # independent recomputation over the same candidate set
        te = [suite.text_encoder.encode_text(t).values for t in (pair.original, pair.counterfactual)]
        best = None
        for cand in overgenerate(pair, cfg, suite):
            io = suite.image_encoder.encode_image(cand.image_o).values
            ic = suite.image_encoder.encode_image(cand.image_c).values
            if oracle_cos(te[0], io) < 0.2 or oracle_cos(te[1], ic) < 0.2 or oracle_cos(io, ic) < 0.7:
                continue
            d = oracle_dir(te[0], te[1], io, ic)
            if best is None or d > best[0] + 1e-12:
                best = (d, cand.generation_seed)
        if rec is None:
            nones += 1
            violations += best is not None
            continue
        selected += 1
        s = rec.selected
        ok = (s.sim_caption_o >= 0.2 and s.sim_caption_c >= 0.2 and s.sim_image_image >= 0.7
              and best is not None and s.generation_seed == best[1])
        violations += not ok
    verdict(6, violations == 0 and selected > 0,
            f"{selected} selections ({nones} runs with no survivor) over 1000 runs, {violations} violations")


# --- 7 ------------------------------------------------------------------------

FLEISS_TABLE = [
    [0, 0, 0, 0, 14], [0, 2, 6, 4, 2], [0, 0, 3, 5, 6], [0, 3, 9, 2, 0], [2, 2, 8, 1, 1],
    [7, 7, 0, 0, 0], [3, 2, 6, 3, 0], [2, 5, 3, 2, 2], [6, 5, 2, 1, 0], [0, 2, 2, 3, 7],
]


def table_shaped_labels():
    total = 34_820
    pcts = {"correct": 73.18, "incorrect": 13.30, "neither": 10.46, "both": 3.06}
    raw = {k: v * total / 100 for k, v in pcts.items()}
    counts = {k: round(v) for k, v in raw.items()}
    short = total - sum(counts.values())
    for k in sorted(raw, key=lambda k: raw[k] - counts[k], reverse=short > 0)[: abs(short)]:
        counts[k] += 1 if short > 0 else -1
    label = {"correct": "counterfactual", "incorrect": "original", "neither": "neither", "both": "both"}
    recs = [AnnotationRecord(f"{k}{i}", label[k], "a", "from_counterfactual_caption")
            for k, n in counts.items() for i in range(n)]
    return pcts, recs


def test_fleiss_and_summary(verdict):
    perfect = fleiss_kappa([[3, 0, 0, 0], [0, 3, 0, 0], [0, 0, 3, 0], [3, 0, 0, 0]]).kappa
    # hand computation of the worked table with exact fractions
    n = 14
    p_bar = sum(Fraction(sum(c * c for c in r) - n, n * (n - 1)) for r in FLEISS_TABLE) / 10
    p_e = sum(Fraction(sum(col), 140) ** 2 for col in zip(*FLEISS_TABLE))
    hand = float((p_bar - p_e) / (1 - p_e))
    worked = fleiss_kappa(FLEISS_TABLE).kappa
    pcts, recs = table_shaped_labels()
    row = summarize_annotations(recs).row("all")
    summary_ok = all(abs(g - w) < 0.01 for g, w in zip(row, pcts.values()))
    ok = perfect == 1.0 and abs(worked - 0.21) < 0.005 and abs(worked - hand) < 1e-12 and summary_ok
    verdict(7, ok, f"perfect kappa {perfect}; worked example {worked:.4f} (hand {hand:.4f}); "
                   f"summary {tuple(round(x, 2) for x in row)}")


# --- 8 ------------------------------------------------------------------------

LABEL_FREQ = [3446, 354, 744, 398, 887, 28]
DELTAS = [(2.50, 2.63, 1.80), (2.31, 2.55, 2.45), (1.78, 1.52, 1.16),
          (0.65, 0.36, -0.29), (0.41, -0.03, -0.37), (-1.04, -2.05, -2.11)]


def test_statistics_oracles(verdict):
    x = [f for f, row in zip(LABEL_FREQ, DELTAS) for _ in row]
    y = [d for row in DELTAS for d in row]
    r, p = pearson_with_p(x, y)
    ref = stats.pearsonr(x, y)
    a = [round(v, 3) for v in np.random.default_rng(25).normal(60.0, 2.0, 25)]
    b = [round(v, 3) for v in np.random.default_rng(52).normal(61.2, 3.5, 25)]
    w = one_tailed_t_test(a, b)
    wref = stats.ttest_ind(b, a, equal_var=False, alternative="greater")
    null = one_tailed_t_test(a, a)
    errs = [abs(r - ref.statistic), abs(p - ref.pvalue), abs(w.t_statistic - wref.statistic),
            abs(w.p_value - wref.pvalue)]
    ok = max(errs) < 1e-6 and null.t_statistic == 0 and abs(null.p_value - 0.5) < 1e-9
    verdict(8, ok, f"pearson r={r:.4f} p={p:.4f}, welch t={w.t_statistic:.4f} p={w.p_value:.4g}; "
                   f"max oracle error {max(errs):.1e}; null p={null.p_value}")


# --- 9 ------------------------------------------------------------------------


def test_taxonomy_arithmetic(verdict):
    words = sorted(HUMAN_WORDS)
    cfs, ann = [], []
    for i in range(4117 + 500):
        human = i < 4117
        frm = words[i % len(words)] if human else "cat"
        cfs.append(SampleRecord(f"p{i}/cf", "x", None, "counterfactual", f"p{i}", "counterfactual", frm, "dog"))
        wrong = (human and i < 1864) or (not human and i % 2)
        ann.append(AnnotationRecord(f"p{i}/cf", "original" if wrong else "counterfactual", "a",
                                    "from_counterfactual_caption"))
    matched, errors, rate = taxonomy_error_rate(ann, cfs, HUMAN_WORDS)
    shown = format_rate(rate)
    ok = (matched, errors) == (4117, 1864) and round(rate, 4) == 0.4528 and shown == "44.3%"
    verdict(9, ok, f"matched={matched} errors={errors} rate={rate:.4f} displayed {shown} (expected 44.3%)")


# --- 10 -----------------------------------------------------------------------


def test_end_to_end_determinism(verdict, tmp_path):
    write_corpus(tmp_path, fixture_captions(100))
    t0 = time.perf_counter()
    out = run_pipeline(tmp_path, seed=7)
    first = snapshot(out)
    shutil.rmtree(out)
    second = snapshot(run_pipeline(tmp_path, seed=7))
    dt = time.perf_counter() - t0
    differing = sorted(k for k in set(first) | set(second) if first.get(k) != second.get(k))
    n_manifests = sum(k.endswith(".jsonl") for k in first)
    ok = not differing and n_manifests >= 3 and dt < 60
    verdict(10, ok, f"two 100-caption runs: {len(first)} files, {len(differing)} differing, "
                    f"{n_manifests} manifests, {dt:.1f}s total")
