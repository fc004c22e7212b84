import json
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfpipe.dataset import (
    AnnotationRecord,
    Manifest,
    MixSpec,
    SampleRecord,
    build_mix,
    filter_human_correct,
    image_verdicts,
    ingest_annotations,
    read_manifest,
    round_half_up,
    split_train_val,
    summarize_annotations,
    write_manifest,
)
from cfpipe.errors import ConfigError, CoverageError, DataError, EmptyInput, LinkageError, SchemaError


def cf_pair(i):
    return [
        SampleRecord(f"p{i}/orig", f"a cat {i}", f"p{i}/orig.png", "counterfactual", f"p{i}", "original", "cat", "dog"),
        SampleRecord(f"p{i}/cf", f"a dog {i}", f"p{i}/cf.png", "counterfactual", f"p{i}", "counterfactual", "cat", "dog"),
    ]


def cf_manifest(n_pairs):
    return Manifest([r for i in range(n_pairs) for r in cf_pair(i)])


def coco_manifest(n):
    return Manifest([SampleRecord(f"c{i}", f"caption {i}", f"c{i}.jpg") for i in range(n)])


class TestManifestIO:
    def test_round_trip(self, tmp_path):
        m = Manifest([SampleRecord("a", "one", "a.jpg"), *cf_pair(0)], source_descriptor="mock:16:0")
        write_manifest(m, tmp_path / "m.jsonl")
        assert read_manifest(tmp_path / "m.jsonl") == m

    def test_empty(self, tmp_path):
        write_manifest(Manifest(), tmp_path / "e.jsonl")
        assert len(read_manifest(tmp_path / "e.jsonl")) == 0

    def test_counterfactual_records_round_trip(self, tmp_path, suite):
        from cfpipe.capgen import CaptionPair
        from cfpipe.imgen import GenerationConfig, generate_record, write_record_images

        rec = generate_record(CaptionPair("a cat on a mat", "a dog on a mat", "cat", "dog", "s1"),
                              GenerationConfig(n_candidates=8), suite, created_at="t")
        write_record_images(rec, tmp_path / "img")
        m = Manifest([rec])
        write_manifest(m, tmp_path / "m.jsonl")
        back = read_manifest(tmp_path / "m.jsonl")
        assert back.records[0].to_json() == rec.to_json()
        back.check_paths(tmp_path / "img")
        with pytest.raises(DataError):
            back.check_paths(tmp_path)

    def test_truncated_last_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_manifest(Manifest([SampleRecord(str(i), "x") for i in range(3)]), p)
        p.write_text(p.read_text()[:-10])
        with pytest.raises(SchemaError) as ei:
            read_manifest(p)
        assert ei.value.line == 4
        assert "line 4" in str(ei.value)

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(json.dumps({"header": {"schema_version": "0.9", "source_descriptor": ""}}) + "\n")
        with pytest.raises(SchemaError):
            read_manifest(p)

    def test_duplicate_ids(self):
        with pytest.raises(DataError):
            Manifest([SampleRecord("a", "x"), SampleRecord("a", "y")])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.text(min_size=1, max_size=20), max_size=8, unique=True), st.text(max_size=10))
    def test_round_trip_property(self, tmp_path_factory, captions, desc):
        p = tmp_path_factory.mktemp("rt") / "m.jsonl"
        m = Manifest([SampleRecord(f"id{i}", c) for i, c in enumerate(captions)], source_descriptor=desc)
        write_manifest(m, p)
        assert read_manifest(p) == m


class TestMix:
    def test_round_half_up(self):
        assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 13057.5, 2.49)] == [1, 2, 3, 13058, 2]

    def test_preset_fractions_enforced(self):
        with pytest.raises(ConfigError):
            MixSpec("base", 0.5, 0.5)
        with pytest.raises(ConfigError):
            MixSpec("custom", 1.2, 0.5)

    def test_small_totals(self):
        coco, cfs = coco_manifest(10), cf_manifest(10)
        # pairs: 5 + 2*round(2.5)=6 -> 11; 10 + round(15)=15 records; 10 + 20
        assert len(build_mix(MixSpec.preset("base"), coco, cfs)) == 5 + 6
        assert len(build_mix(MixSpec.preset("medium"), coco, cfs)) == 10 + 15
        assert len(build_mix(MixSpec.preset("all"), coco, cfs)) == 30

    def test_pair_atomic_and_deterministic(self):
        coco, cfs = coco_manifest(20), cf_manifest(20)
        for seed in range(20):
            m = build_mix(MixSpec.preset("base", seed), coco, cfs)
            assert m == build_mix(MixSpec.preset("base", seed), coco, cfs)
            pids = [r.pair_id for r in m if r.kind == "counterfactual"]
            assert all(pids.count(p) == 2 for p in pids)

    def test_medium_single_orphan(self):
        m = build_mix(MixSpec.preset("medium", 3), coco_manifest(4), cf_manifest(7))
        pids = [r.pair_id for r in m if r.kind == "counterfactual"]
        assert len(pids) == 11  # round_half_up(0.75 * 14 = 10.5)
        assert sorted(pids.count(p) for p in set(pids)) == [1, 2, 2, 2, 2, 2]

    def test_expected_total(self):
        with pytest.raises(DataError):
            build_mix(MixSpec("all", 1.0, 1.0, expected_total=5), coco_manifest(2), cf_manifest(2))

    def test_linkage(self):
        broken = Manifest(cf_pair(0)[:1] + cf_pair(1))
        with pytest.raises(LinkageError):
            build_mix(MixSpec.preset("all"), coco_manifest(1), broken)


class TestSplit:
    def test_sizes(self):
        train, val = split_train_val(coco_manifest(10), 0.8, seed=0)
        assert (len(train), len(val)) == (8, 2)

    def test_pair_atomic_over_seeds(self):
        m = Manifest(coco_manifest(7).records + cf_manifest(9).records)
        for seed in range(100):
            train, val = split_train_val(m, 0.8, seed)
            tr, va = {r.id for r in train}, {r.id for r in val}
            assert not tr & va and tr | va == {r.id for r in m}
            for i in range(9):
                assert (f"p{i}/orig" in tr) == (f"p{i}/cf" in tr)

    def test_deterministic(self):
        m = cf_manifest(12)
        assert split_train_val(m, 0.7, 5) == split_train_val(m, 0.7, 5)

    @pytest.mark.parametrize("f", [0.0, 1.0, 1.5])
    def test_bad_fraction(self, f):
        with pytest.raises(ConfigError):
            split_train_val(coco_manifest(3), f)


def write_rows(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def ann(image_id, label, annotator="a1", origin="from_counterfactual_caption"):
    return AnnotationRecord(image_id, label, annotator, origin)


class TestAnnotations:
    def test_both_accepted(self, tmp_path):
        p = write_rows(tmp_path / "a.jsonl", [
            {"image_id": "x", "label": "both", "annotator_id": "a", "image_origin": "from_original_caption"}])
        assert ingest_annotations(p)[0].label == "both"

    def test_unknown_label(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("image_id,label,annotator_id,image_origin\n"
                     "x,both,a,from_original_caption\ny,maybe,a,from_original_caption\n")
        with pytest.raises(SchemaError, match="row 3"):
            ingest_annotations(p)

    def test_duplicates(self, tmp_path):
        row = {"image_id": "x", "label": "both", "annotator_id": "a", "image_origin": "from_original_caption"}
        with pytest.raises(SchemaError, match="duplicate"):
            ingest_annotations(write_rows(tmp_path / "a.jsonl", [row, row]))

    def test_table_shaped_summary(self):
        total = 34_820
        pcts = {"correct": 73.18, "incorrect": 13.30, "neither": 10.46, "both": 3.06}
        raw = {k: v * total / 100 for k, v in pcts.items()}
        counts = {k: round(v) for k, v in raw.items()}
        short = total - sum(counts.values())
        # settle the rounding residue on the largest remainders
        for k in sorted(raw, key=lambda k: raw[k] - counts[k], reverse=short > 0)[: abs(short)]:
            counts[k] += 1 if short > 0 else -1
        assert sum(counts.values()) == total
        label = {"correct": "counterfactual", "incorrect": "original", "neither": "neither", "both": "both"}
        recs = [ann(f"{k}{i}", label[k]) for k, n in counts.items() for i in range(n)]
        row = summarize_annotations(recs).row("all")
        for got, want in zip(row, pcts.values()):
            assert abs(got - want) < 0.01
        assert abs(sum(row) - 100) < 0.01

    def test_all_correct(self):
        recs = [ann("a", "counterfactual"), ann("b", "original", origin="from_original_caption")]
        assert summarize_annotations(recs).row("all") == (100, 0, 0, 0)

    def test_single_neither(self):
        assert summarize_annotations([ann("a", "neither")]).row("all") == (0, 0, 100, 0)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            summarize_annotations([])

    def test_majority(self):
        recs = [ann("a", "counterfactual", "1"), ann("a", "neither", "2"), ann("a", "counterfactual", "3"),
                ann("b", "counterfactual", "1"), ann("b", "both", "2")]
        assert image_verdicts(recs) == {"a": True, "b": False}


class TestFilterHumanCorrect:
    def manifest(self):
        return Manifest([SampleRecord(f"s{i}/cf", "c", kind="counterfactual", pair_id=f"s{i}",
                                      role="counterfactual") for i in range(4)])

    def test_three_of_four(self):
        labels = ["counterfactual", "counterfactual", "original", "counterfactual"]
        out = filter_human_correct(self.manifest(), [ann(f"s{i}/cf", l) for i, l in enumerate(labels)])
        assert [r.id for r in out] == ["s0/cf", "s1/cf", "s3/cf"]

    def test_uncovered(self):
        with pytest.raises(CoverageError):
            filter_human_correct(self.manifest(), [ann("s0/cf", "counterfactual")])

    def test_extra_ignored(self, caplog):
        recs = [ann(f"s{i}/cf", "counterfactual") for i in range(4)] + [ann("zz", "both")]
        with caplog.at_level(logging.WARNING):
            out = filter_human_correct(self.manifest(), recs)
        assert len(out) == 4
        assert "1 image id" in caplog.text
