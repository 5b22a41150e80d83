import itertools
import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vani import curation, text
from vani.curation import CurationError, SelectionConfig
from vani.dsp import Waveform, write_wav
from vani.manifest import ClipRecord, DatasetManifest


def rec(cid, spk="s1", cer=None, dur=1.0, transcript="t", lang="hi", asr=None, path=None):
    return ClipRecord(cid, path or f"/nowhere/{cid}.wav", spk, lang, lang, transcript, dur,
                      transcript_asr=asr, cer=cer)


def wav(tmp_path, name, n):
    p = tmp_path / f"{name}.wav"
    write_wav(p, Waveform(np.full(n, 0.1), 16000))
    return str(p)


# -- clean -----------------------------------------------------------------------


def test_clean_drops_empty_audio(tmp_path):
    m = DatasetManifest((rec("a", transcript="x", path=wav(tmp_path, "a", 100)),
                         rec("b", transcript="y", path=wav(tmp_path, "b", 0))))
    assert [r.clip_id for r in curation.clean(m).records] == ["a"]


def test_clean_drops_unreadable_audio(tmp_path, caplog):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav")
    m = DatasetManifest((rec("a", transcript="x", path=wav(tmp_path, "a", 10)), rec("b", transcript="y", path=str(bad))))
    with caplog.at_level(logging.WARNING):
        assert len(curation.clean(m)) == 1
    assert "bad.wav" in caplog.text


def test_clean_dedups_and_normalizes(tmp_path):
    m = DatasetManifest((rec("b", transcript="a\nb|", path=wav(tmp_path, "b", 10)),
                         rec("a", transcript="a b।", path=wav(tmp_path, "a", 10))))
    out = curation.clean(m)
    assert [r.clip_id for r in out.records] == ["a"]
    assert out.records[0].transcript_gt == "a b।"
    assert out.split_tag == "cleaned"


def test_clean_is_idempotent(tmp_path):
    m = DatasetManifest(tuple(rec(c, transcript=t, path=wav(tmp_path, c, 10))
                              for c, t in [("a", "x  y"), ("b", "z"), ("c", "x y")]))
    once = curation.clean(m)
    assert curation.clean(once) == once


# -- prune -----------------------------------------------------------------------


def test_prune_example():
    m = DatasetManifest((rec("a", transcript="aaaaaaaaaa", asr="aaaaaaaaab"),
                         rec("b", transcript="aaaaaaaaaa", asr="aaaaaaaaaa"),
                         rec("c", transcript="aa", asr="ab")))
    out = curation.prune_top_k(m, SelectionConfig(top_k_per_speaker=2))
    assert [r.clip_id for r in out.records] == ["a", "b"]
    assert [r.cer for r in out.records] == [0.1, 0.0]
    assert out.split_tag == "pruned"


def test_prune_k_at_least_n_keeps_all():
    m = DatasetManifest((rec("a", asr="t"), rec("b", asr="x")))
    assert len(curation.prune_top_k(m, SelectionConfig(top_k_per_speaker=5))) == 2


def test_prune_tie_keeps_smaller_id():
    m = DatasetManifest((rec("b", transcript="abcdefghij", asr="abcdefghiX"),
                         rec("a", transcript="abcdefghij", asr="Xbcdefghij")))
    out = curation.prune_top_k(m, SelectionConfig(top_k_per_speaker=1))
    assert [r.clip_id for r in out.records] == ["a"]


def test_prune_missing_hypothesis_names_clip():
    m = DatasetManifest((rec("a", asr="t"), rec("zz9")))
    with pytest.raises(CurationError, match="zz9"):
        curation.prune_top_k(m)


@given(st.lists(st.tuples(st.sampled_from(["s1", "s2", "s3"]), st.text(alphabet="abc", min_size=1, max_size=5),
                          st.text(alphabet="abc", max_size=5)), max_size=30),
       st.integers(1, 6))
def test_prune_matches_sort_oracle(rows, k):
    m = DatasetManifest(tuple(rec(f"c{i:02d}", spk=s, transcript=t, asr=h) for i, (s, t, h) in enumerate(rows)))
    out = curation.prune_top_k(m, SelectionConfig(top_k_per_speaker=k))
    for spk in {s for s, _, _ in rows}:
        scored = sorted((text.cer(t, h), f"c{i:02d}") for i, (s, t, h) in enumerate(rows) if s == spk)
        want = [cid for _, cid in scored[:k]]
        got = sorted(r.clip_id for r in out.records if r.speaker_id == spk)
        assert got == sorted(want)


# -- parallel selection ----------------------------------------------------------------


def parallel_manifest(a_texts, b_texts, lang="hi"):
    recs = [rec(f"a{i}", spk="fem", transcript=t, lang=lang) for i, t in enumerate(a_texts)]
    recs += [rec(f"b{i}", spk="mal", transcript=t, lang=lang) for i, t in enumerate(b_texts)]
    return DatasetManifest(tuple(recs))


def test_select_parallel_example():
    m = parallel_manifest(["abc", "xyz"], ["abd", "uvw"])
    pairs = curation.select_parallel(m, SelectionConfig(parallel_pairs_per_language=2), "hi")
    assert [(p.clip_a, p.clip_b) for p in pairs] == [("a0", "b0"), ("a1", "b1")]
    assert pairs[0].pair_cer == pytest.approx(1 / 3)
    assert pairs[1].pair_cer == 1.0


def test_select_parallel_identical_first():
    m = parallel_manifest(["hello", "qq"], ["qp", "hello"])
    pairs = curation.select_parallel(m, SelectionConfig(), "hi")
    assert (pairs[0].clip_a, pairs[0].clip_b, pairs[0].pair_cer) == ("a0", "b1", 0.0)


def test_select_parallel_zero_pairs():
    m = parallel_manifest(["abc"], ["abc"])
    assert curation.select_parallel(m, SelectionConfig(), "hi", n_pairs=0) == []


def test_select_parallel_errors():
    m = parallel_manifest(["abc"], ["abc"])
    with pytest.raises(CurationError, match="no records"):
        curation.select_parallel(m, SelectionConfig(), "te")
    three = DatasetManifest(m.records + (rec("c0", spk="third", transcript="abc"),))
    with pytest.raises(CurationError, match="3 speakers"):
        curation.select_parallel(three, SelectionConfig(), "hi")


def test_length_ratio_pruning_skips_far_pairs():
    pairs = curation.candidate_pairs(np.array([2, 10]), np.array([5, 4]), 2.0)
    assert sorted(map(tuple, pairs.tolist())) == [(0, 1), (1, 0)]


def brute_force_optimal(cost):
    """Minimal total cost over all matchings of the greedy's cardinality."""
    na, nb = cost.shape
    best = math.inf
    size = min(na, nb)
    for rows in itertools.combinations(range(na), size):
        for cols in itertools.permutations(range(nb), size):
            best = min(best, sum(cost[r, c] for r, c in zip(rows, cols)))
    return best


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_greedy_disjoint_and_never_beats_optimal(na, nb, seed):
    r = np.random.default_rng(seed)
    a_texts = ["".join(r.choice(list("abc"), size=r.integers(1, 5))) for _ in range(na)]
    b_texts = ["".join(r.choice(list("abc"), size=r.integers(1, 5))) for _ in range(nb)]
    m = parallel_manifest(a_texts, b_texts)
    cfg = SelectionConfig(max_length_ratio=1e9)
    pairs = curation.select_parallel(m, cfg, "hi")
    assert len({p.clip_a for p in pairs}) == len(pairs) == len({p.clip_b for p in pairs})
    assert len(pairs) == min(na, nb)
    cost = np.array([[text.cer(a, b) for b in b_texts] for a in a_texts])
    greedy_total = sum(p.pair_cer for p in pairs)
    assert greedy_total >= brute_force_optimal(cost) - 1e-12


def test_pairs_file_round_trip(tmp_path):
    m = parallel_manifest(["abc", "xyz"], ["abd", "uvw"])
    pairs = curation.select_parallel(m, SelectionConfig(), "hi")
    curation.save_pairs({"hi": pairs}, tmp_path / "p.json")
    assert curation.load_pairs(tmp_path / "p.json") == {"hi": pairs}
    sub = curation.parallel_subset(m, pairs[:1])
    assert [r.clip_id for r in sub.records] == ["a0", "b0"] and sub.split_tag == "parallel"


# -- budget -------------------------------------------------------------------------


def test_budget_example():
    m = DatasetManifest(tuple(rec(c, cer=0.1 * i, dur=7200.0) for i, c in enumerate("abc")))
    out = curation.apply_budget(m, SelectionConfig(budget_hours_per_speaker=5.0))
    assert [r.clip_id for r in out.records] == ["a", "b"]


def test_budget_all_fit():
    m = DatasetManifest((rec("a", dur=10.0), rec("b", dur=20.0)))
    assert len(curation.apply_budget(m)) == 2


def test_budget_single_clip_over_warns(caplog):
    m = DatasetManifest((rec("a", dur=6 * 3600.0),))
    with caplog.at_level(logging.WARNING):
        assert len(curation.apply_budget(m)) == 0
    assert "s1" in caplog.text


def test_budget_strict_inequality():
    m = DatasetManifest((rec("a", cer=0.0, dur=3 * 3600.0), rec("b", cer=0.1, dur=2 * 3600.0)))
    assert [r.clip_id for r in curation.apply_budget(m).records] == ["a"]


@given(st.lists(st.tuples(st.sampled_from(["s1", "s2"]), st.floats(0.0, 1.0), st.floats(1.0, 9000.0)),
                max_size=25),
       st.floats(0.1, 6.0))
def test_budget_invariants(rows, hours):
    m = DatasetManifest(tuple(rec(f"c{i:02d}", spk=s, cer=c, dur=d) for i, (s, c, d) in enumerate(rows)))
    cfg = SelectionConfig(budget_hours_per_speaker=hours)
    out = curation.apply_budget(m, cfg)
    for spk in ("s1", "s2"):
        kept = [r for r in out.records if r.speaker_id == spk]
        total = sum(r.duration_s for r in kept)
        assert total < hours * 3600.0
        ordered = sorted((r for r in m.records if r.speaker_id == spk), key=lambda r: (r.cer, r.clip_id))
        assert [r.clip_id for r in ordered[: len(kept)]] == sorted((r.clip_id for r in kept),
                                                                   key=lambda c: (m.by_id()[c].cer, c))
        if len(kept) < len(ordered):
            assert total + ordered[len(kept)].duration_s >= hours * 3600.0


# -- split -------------------------------------------------------------------------


def test_split_96_4():
    m = DatasetManifest(tuple(rec(f"c{i:03d}") for i in range(100)))
    tr, va = curation.split_train_val(m, SelectionConfig(), seed=3)
    assert (len(tr), len(va)) == (96, 4)
    assert tr.split_tag == "train" and va.split_tag == "val"


def test_split_deterministic_and_partition():
    m = DatasetManifest(tuple(rec(f"c{i:03d}", spk=f"s{i % 3}") for i in range(40)))
    a = curation.split_train_val(m, SelectionConfig(val_fraction=0.2), seed=9)
    b = curation.split_train_val(m, SelectionConfig(val_fraction=0.2), seed=9)
    assert a == b
    ids_tr = {r.clip_id for r in a[0].records}
    ids_va = {r.clip_id for r in a[1].records}
    assert not ids_tr & ids_va and ids_tr | ids_va == {r.clip_id for r in m.records}


def test_split_small_speakers():
    one = DatasetManifest((rec("a"),))
    tr, va = curation.split_train_val(one, SelectionConfig(), 0)
    assert (len(tr), len(va)) == (1, 0)
    two = DatasetManifest((rec("a"), rec("b")))
    tr, va = curation.split_train_val(two, SelectionConfig(), 0)
    assert (len(tr), len(va)) == (1, 1)


def test_selection_config_validation():
    for bad in ({"top_k_per_speaker": 0}, {"budget_hours_per_speaker": 0}, {"val_fraction": 1.0}):
        with pytest.raises(CurationError):
            SelectionConfig(**bad)


def test_hypotheses_file(tmp_path):
    p = tmp_path / "asr.jsonl"
    p.write_text('{"clip_id": "a", "transcript_asr": "x"}\n\n{"clip_id": "b", "transcript_asr": "y"}\n')
    hyps = curation.load_hypotheses(p)
    assert hyps == {"a": "x", "b": "y"}
    m = curation.attach_hypotheses(DatasetManifest((rec("a"), rec("c"))), hyps)
    assert m.by_id()["a"].transcript_asr == "x" and m.by_id()["c"].transcript_asr is None
