import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concreteness.corpus import (
    AnnotationError,
    AnnotationSet,
    CaptionRecord,
    CorpusError,
    ReadStats,
    ShardManifest,
    load_index,
    read_annotations,
    read_corpus,
    shard,
    write_annotations,
    write_corpus,
)


def rec(i, caption="a dog on a mat", **scores):
    return CaptionRecord(id=i, caption=caption, scores={k: float(v) for k, v in scores.items()})


# --- record validation ---------------------------------------------------------

def test_record_rejects_empty_id():
    with pytest.raises(CorpusError):
        CaptionRecord(id="", caption="x").validate()


def test_record_rejects_blank_caption():
    with pytest.raises(CorpusError):
        CaptionRecord(id="a", caption="   ").validate()


def test_record_rejects_out_of_range_score():
    with pytest.raises(CorpusError):
        rec("a", vba=1.5).validate()
    with pytest.raises(CorpusError):
        rec("a", vba=-0.1).validate()
    with pytest.raises(CorpusError):
        rec("a", vba=float("nan")).validate()


def test_with_score_returns_new_record():
    base = rec("a", vba=0.5)
    enriched = base.with_score("icc", 0.9)
    assert base.scores == {"vba": 0.5}
    assert enriched.scores == {"vba": 0.5, "icc": 0.9}


# --- corpus io ------------------------------------------------------------------

def test_read_three_valid_lines_in_order(tmp_path):
    path = tmp_path / "c.jsonl"
    write_corpus([rec("a"), rec("b"), rec("c")], path)
    assert [r.id for r in read_corpus(path)] == ["a", "b", "c"]


def test_strict_read_errors_on_malformed_line(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(rec("a").to_json() + "\n" + "{not json\n", encoding="utf-8")
    with pytest.raises(CorpusError, match=":2"):
        list(read_corpus(path, strict=True))


def test_lenient_read_skips_and_counts(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(rec("a").to_json() + "\n" + "{not json\n", encoding="utf-8")
    stats = ReadStats()
    records = list(read_corpus(path, strict=False, stats=stats))
    assert [r.id for r in records] == ["a"]
    assert stats.skipped == 1


def test_lenient_read_never_yields_invalid_records(tmp_path):
    path = tmp_path / "c.jsonl"
    lines = [
        rec("a").to_json(),
        json.dumps({"id": "", "caption": "x"}),
        json.dumps({"id": "b", "caption": "   "}),
        json.dumps({"id": "c", "caption": "ok", "scores": {"s": 2.0}}),
        rec("d").to_json(),
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    stats = ReadStats()
    records = list(read_corpus(path, strict=False, stats=stats))
    for r in records:
        r.validate()
    assert [r.id for r in records] == ["a", "d"]
    assert stats.skipped == 3


def test_strict_read_errors_on_duplicate_id(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(rec("a").to_json() + "\n" + rec("a").to_json() + "\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="duplicate"):
        list(read_corpus(path, strict=True))


def test_lenient_duplicates_last_wins_in_index(tmp_path):
    path = tmp_path / "c.jsonl"
    write_corpus([rec("a", vba=0.1), rec("a", vba=0.9)], path)
    index = load_index(path)
    assert index["a"].scores["vba"] == 0.9


def test_write_empty_corpus(tmp_path):
    path = tmp_path / "c.jsonl"
    assert write_corpus([], path) == 0
    assert path.read_text(encoding="utf-8") == ""


def test_write_ten_records(tmp_path):
    path = tmp_path / "c.jsonl"
    assert write_corpus([rec(f"r{i}") for i in range(10)], path) == 10
    assert len(path.read_text(encoding="utf-8").splitlines()) == 10


def test_unicode_caption_roundtrip(tmp_path):
    path = tmp_path / "c.jsonl"
    caption = "zwölf Boxkämpfer \U0001F43A 中文"
    write_corpus([CaptionRecord(id="u", caption=caption)], path)
    (back,) = read_corpus(path)
    assert back.caption == caption
    # raw UTF-8 on disk, no escaping
    assert caption.encode("utf-8") in path.read_bytes()


def test_missing_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        list(read_corpus(tmp_path / "absent.jsonl"))


captions = st.text(min_size=1, max_size=30).filter(lambda s: s.strip())
score_values = st.integers(0, 1000).map(lambda n: n / 1000)
records_strategy = st.lists(
    st.tuples(st.uuids().map(str), captions,
              st.dictionaries(st.sampled_from(["vba", "sba", "icc", "clip"]), score_values, max_size=3)),
    max_size=20,
).map(lambda rows: [CaptionRecord(id=i, caption=c, scores=s) for i, c, s in rows])


@settings(max_examples=50)
@given(records_strategy)
def test_roundtrip_property(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("rt") / "c.jsonl"
    write_corpus(records, path)
    assert list(read_corpus(path)) == records


# --- sharding -------------------------------------------------------------------

def test_shard_sizes(tmp_path):
    manifest = shard([rec(f"r{i}") for i in range(10)], 4, tmp_path)
    assert manifest.records_per_shard == (4, 4, 2)
    assert manifest.total == 10


def test_shard_exact_fit(tmp_path):
    manifest = shard([rec(f"r{i}") for i in range(4)], 4, tmp_path)
    assert manifest.records_per_shard == (4,)


def test_shard_empty(tmp_path):
    manifest = shard([], 4, tmp_path)
    assert manifest.shard_paths == ()
    assert manifest.total == 0


def test_shard_concatenation_reproduces_input(tmp_path):
    records = [rec(f"r{i:03d}") for i in range(23)]
    manifest = shard(records, 5, tmp_path)
    joined = [r for p in manifest.shard_paths for r in read_corpus(p)]
    assert joined == records


def test_manifest_roundtrip(tmp_path):
    manifest = shard([rec(f"r{i}") for i in range(7)], 3, tmp_path)
    path = tmp_path / "manifest.json"
    manifest.save(path)
    assert ShardManifest.load(path) == manifest


def test_manifest_validation():
    with pytest.raises(CorpusError):
        ShardManifest(("a",), (2,), 3).validate()
    with pytest.raises(CorpusError):
        ShardManifest(("a", "b"), (2,), 2).validate()


def test_shard_size_must_be_positive(tmp_path):
    with pytest.raises(ValueError):
        shard([], 0, tmp_path)


# --- annotations ----------------------------------------------------------------

def test_read_annotations_basic(tmp_path):
    path = tmp_path / "ann.tsv"
    path.write_text("# scale 0 3\nid\tscore\na\t0\nb\t3\n", encoding="utf-8")
    annotations = read_annotations(path)
    assert annotations.scale_min == 0
    assert annotations.scale_max == 3
    assert annotations.labels == {"a": 0.0, "b": 3.0}


def test_read_annotations_out_of_range(tmp_path):
    path = tmp_path / "ann.tsv"
    path.write_text("# scale 0 3\nid\tscore\na\t4\n", encoding="utf-8")
    with pytest.raises(AnnotationError):
        read_annotations(path)


def test_read_annotations_word_scale(tmp_path):
    path = tmp_path / "ann.tsv"
    path.write_text("# scale 1 5\nid\tscore\nw1\t1\nw2\t5\n", encoding="utf-8")
    annotations = read_annotations(path)
    assert (annotations.scale_min, annotations.scale_max) == (1, 5)


def test_read_annotations_missing_scale(tmp_path):
    path = tmp_path / "ann.tsv"
    path.write_text("id\tscore\na\t1\n", encoding="utf-8")
    with pytest.raises(AnnotationError, match="scale"):
        read_annotations(path)


def test_read_annotations_duplicate_id(tmp_path):
    path = tmp_path / "ann.tsv"
    path.write_text("# scale 0 3\nid\tscore\na\t1\na\t2\n", encoding="utf-8")
    with pytest.raises(AnnotationError, match="duplicate"):
        read_annotations(path)


def test_annotations_roundtrip(tmp_path):
    path = tmp_path / "ann.tsv"
    annotations = AnnotationSet(0, 3, {"a": 0.5, "b": 2.75})
    write_annotations(annotations, path)
    assert read_annotations(path) == annotations


def test_annotation_set_validates_scale():
    with pytest.raises(AnnotationError):
        AnnotationSet(3, 3, {}).validate()
