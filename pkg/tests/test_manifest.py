import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vani.manifest import (
    FIELDS,
    ClipRecord,
    DatasetManifest,
    ManifestError,
    load_manifest,
    make_clip_id,
    save_manifest,
    summarize,
)


def rec(cid, spk="s1", dur=1.0, **kw):
    return ClipRecord(cid, f"/data/{cid}.wav", spk, kw.pop("language", "hi"), kw.pop("accent_id", "hi"),
                      kw.pop("transcript_gt", "नमस्ते।"), dur, **kw)


def test_load_empty_file(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("")
    assert len(load_manifest(p)) == 0


def test_load_sorts_records(tmp_path):
    p = tmp_path / "m.jsonl"
    save_manifest(DatasetManifest((rec("b"), rec("a"))), p)
    m = load_manifest(p)
    assert [r.clip_id for r in m.records] == ["a", "b"]


def test_load_rejects_duplicate_id(tmp_path):
    p = tmp_path / "m.jsonl"
    line = json.dumps(rec("a").to_dict())
    p.write_text(line + "\n" + line + "\n")
    with pytest.raises(ManifestError, match="'a'"):
        load_manifest(p)


def test_load_reports_line_number(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps(rec("a").to_dict()) + "\n{not json\n")
    with pytest.raises(ManifestError, match=":2"):
        load_manifest(p)


def test_missing_field_is_an_error(tmp_path):
    p = tmp_path / "m.jsonl"
    d = rec("a").to_dict()
    del d["speaker_id"]
    p.write_text(json.dumps(d) + "\n")
    with pytest.raises(ManifestError, match="speaker_id"):
        load_manifest(p)


def test_round_trip_empty_is_byte_identical(tmp_path):
    p = tmp_path / "m.jsonl"
    save_manifest(DatasetManifest(()), p)
    first = p.read_bytes()
    save_manifest(load_manifest(p), p)
    assert p.read_bytes() == first


def test_round_trip_three_records_and_utf8(tmp_path):
    m = DatasetManifest((rec("c", cer=0.25, transcript_asr="नमस्ते"), rec("a"), rec("b", dur=2.5)))
    p = tmp_path / "m.jsonl"
    save_manifest(m, p)
    assert load_manifest(p) == m
    assert "नमस्ते।" in p.read_text(encoding="utf-8")


def test_canonical_field_order_and_omitted_optionals(tmp_path):
    p = tmp_path / "m.jsonl"
    save_manifest(DatasetManifest((rec("a", cer=0.1, transcript_asr="x"),)), p)
    keys = list(json.loads(p.read_text()).keys())
    assert keys == [f for f in FIELDS if f in keys]
    assert "augmented_from" not in keys and "formant_scale" not in keys


@pytest.mark.parametrize("kw", [
    {"dur": 0.0},
    {"dur": -1.0},
    {"cer": -0.1},
    {"augmented_from": "x"},
    {"formant_scale": 1.1},
    {"augmented_from": "x", "formant_scale": 1.0},
])
def test_record_invariants(kw):
    with pytest.raises(ManifestError):
        rec("a", **kw)


def test_augmented_record_is_valid():
    r = rec("a@fs1.1", augmented_from="a", formant_scale=1.1)
    assert r.formant_scale == 1.1
    assert rec("a", formant_scale=1.0).formant_scale == 1.0


def test_unknown_split_tag():
    with pytest.raises(ManifestError):
        DatasetManifest((), "test")


def test_split_tag_from_file_name(tmp_path):
    p = tmp_path / "corpus.pruned.jsonl"
    save_manifest(DatasetManifest((rec("a"),), "pruned"), p)
    assert load_manifest(p).split_tag == "pruned"
    q = tmp_path / "val.jsonl"
    q.write_bytes(p.read_bytes())
    assert load_manifest(q).split_tag == "val"
    assert load_manifest(q, "train").split_tag == "train"


def test_make_clip_id_disambiguates_collisions():
    taken = set()
    a = make_clip_id("/x/s1/001.wav", "s1", taken)
    b = make_clip_id("/y/s2/001.wav", "s2", taken)
    assert a == "001"
    assert b != a and b.startswith("s2")


def test_summarize_examples():
    m = DatasetManifest((rec("a", dur=1800.0), rec("b", dur=1800.0)))
    assert summarize(m) == {("s1", "hi"): {"files": 2, "hours": 1.0}}
    assert summarize(DatasetManifest(())) == {}


@given(st.lists(st.floats(min_value=1e-3, max_value=1e5), min_size=1, max_size=60))
def test_summarize_total_is_exact_sum(durations):
    m = DatasetManifest(tuple(rec(f"c{i:03d}", dur=d) for i, d in enumerate(durations)))
    hours = summarize(m)[("s1", "hi")]["hours"]
    assert math.isclose(hours, math.fsum(durations) / 3600.0, rel_tol=1e-12)


ids = st.text(alphabet="abcxyz0123_", min_size=1, max_size=8)


@given(st.lists(st.tuples(ids, st.floats(min_value=0.01, max_value=100), st.text(max_size=10)),
                max_size=10, unique_by=lambda t: t[0]))
def test_save_load_identity(tmp_path_factory, rows):
    m = DatasetManifest(tuple(rec(cid, dur=d, transcript_gt=t) for cid, d, t in rows))
    p = tmp_path_factory.mktemp("m") / "m.jsonl"
    save_manifest(m, p)
    back = load_manifest(p)
    assert back == m
    save_manifest(back, p)
    assert load_manifest(p) == m
