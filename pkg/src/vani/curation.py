"""Dataset selection: cleaning, CER pruning, parallel prompt pairing, hour budget, splits."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from vani import text
from vani.manifest import ClipRecord, DatasetManifest, ManifestError, atomic_write_text

log = logging.getLogger(__name__)


class CurationError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionConfig:
    top_k_per_speaker: int = 8000
    budget_hours_per_speaker: float = 5.0
    parallel_pairs_per_language: int = 3000
    val_fraction: float = 0.04
    max_length_ratio: float = 2.0

    def __post_init__(self):
        if self.top_k_per_speaker <= 0 or self.parallel_pairs_per_language < 0:
            raise CurationError("top_k_per_speaker must be positive and the pair count non-negative")
        if not self.budget_hours_per_speaker > 0:
            raise CurationError("budget_hours_per_speaker must be positive")
        if not 0 < self.val_fraction < 1:
            raise CurationError("val_fraction must lie in (0, 1)")
        if not self.max_length_ratio >= 1:
            raise CurationError("max_length_ratio must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PromptPair:
    clip_a: str
    clip_b: str
    pair_cer: float


def _group_by_speaker(records) -> dict:
    groups: dict = {}
    for r in records:
        groups.setdefault(r.speaker_id, []).append(r)
    return dict(sorted(groups.items()))


def _cer_key(r: ClipRecord):
    return (math.inf if r.cer is None else r.cer, r.clip_id)


def _audio_ok(path: str) -> bool:
    from vani.dsp.audio import read_wav

    try:
        return len(read_wav(path)) > 0
    except Exception as exc:  # unreadable audio is dropped, never fatal
        log.warning("dropping unreadable audio %s: %s", path, exc)
        return False


def clean(m: DatasetManifest, check_audio: bool = True) -> DatasetManifest:
    """Drop empty/unreadable audio and duplicate transcripts; normalize transcripts."""
    kept = []
    for r in m.records:
        if check_audio and not _audio_ok(r.audio_path):
            log.info("clean: removed %s (empty or unreadable audio)", r.clip_id)
            continue
        kept.append(r.with_(transcript_gt=text.normalize_transcript(r.transcript_gt)))
    survivors = DatasetManifest(tuple(kept), m.split_tag)
    dropped = {cid for group in text.find_duplicates(survivors) for cid in group[1:]}
    for cid in sorted(dropped):
        log.info("clean: removed %s (duplicate transcript)", cid)
    return DatasetManifest(tuple(r for r in kept if r.clip_id not in dropped), "cleaned")


def load_hypotheses(path) -> dict:
    """Read ASR output JSONL lines ``{"clip_id": ..., "transcript_asr": ...}``."""
    hyps = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                hyps[row["clip_id"]] = row["transcript_asr"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad hypothesis line: {exc}") from exc
    return hyps


def attach_hypotheses(m: DatasetManifest, hyps: dict) -> DatasetManifest:
    return m.with_records(
        r.with_(transcript_asr=hyps[r.clip_id]) if r.clip_id in hyps else r for r in m.records
    )


def score_cer(m: DatasetManifest) -> DatasetManifest:
    """Fill ``cer`` from ``transcript_gt`` vs ``transcript_asr`` on every record."""
    out = []
    for r in m.records:
        if r.transcript_asr is None:
            raise CurationError(f"clip {r.clip_id!r} has no ASR hypothesis")
        out.append(r.with_(cer=text.cer(r.transcript_gt, r.transcript_asr)))
    return m.with_records(out)


def prune_top_k(m: DatasetManifest, cfg: SelectionConfig = SelectionConfig()) -> DatasetManifest:
    """Keep each speaker's ``top_k_per_speaker`` lowest-CER clips (ties by clip id)."""
    scored = score_cer(m)
    kept = []
    for recs in _group_by_speaker(scored.records).values():
        kept.extend(sorted(recs, key=_cer_key)[: cfg.top_k_per_speaker])
    return DatasetManifest(tuple(kept), "pruned")


def candidate_pairs(lengths_a: np.ndarray, lengths_b: np.ndarray, max_ratio: float) -> np.ndarray:
    """All (i, j) index pairs whose lengths are within ``max_ratio`` of each other.

    CER(a, b) >= |len a - len b| / len a, so pairs outside the ratio can never
    beat a near-identical pair and are skipped.
    """
    la = np.asarray(lengths_a, dtype=np.float64)[:, None]
    lb = np.asarray(lengths_b, dtype=np.float64)[None, :]
    ok = (la > 0) & (lb > 0) & (np.maximum(la, lb) <= max_ratio * np.minimum(la, lb))
    ia, ib = np.nonzero(ok)
    return np.stack([ia, ib], axis=1).astype(np.int64)


def greedy_match(cost: np.ndarray, pairs: np.ndarray, ids_a: list, ids_b: list, limit: int) -> list:
    """Greedy disjoint matching in ascending ``(cost, id_a, id_b)`` order."""
    if limit <= 0 or len(pairs) == 0:
        return []
    rank_a = np.argsort(np.argsort(np.asarray(ids_a, dtype=object)))
    rank_b = np.argsort(np.argsort(np.asarray(ids_b, dtype=object)))
    order = np.lexsort((rank_b[pairs[:, 1]], rank_a[pairs[:, 0]], cost))
    used_a = np.zeros(len(ids_a), dtype=bool)
    used_b = np.zeros(len(ids_b), dtype=bool)
    out = []
    for k in order:
        i, j = pairs[k]
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        out.append(PromptPair(ids_a[i], ids_b[j], float(cost[k])))
        if len(out) >= limit:
            break
    return out


def select_parallel(
    m: DatasetManifest,
    cfg: SelectionConfig = SelectionConfig(),
    language: str = "",
    n_pairs: Optional[int] = None,
) -> list:
    """Pair clips of the two speakers of ``language`` by minimal transcript CER.

    The lexicographically first speaker supplies the reference side. Returns
    disjoint :class:`PromptPair` objects in selection order.
    """
    recs = [r for r in m.records if r.language == language]
    if not recs:
        raise CurationError(f"no records for language {language!r}")
    groups = _group_by_speaker(recs)
    if len(groups) != 2:
        raise CurationError(
            f"language {language!r} has {len(groups)} speakers; parallel selection needs exactly 2"
        )
    limit = cfg.parallel_pairs_per_language if n_pairs is None else n_pairs
    (_, side_a), (_, side_b) = groups.items()
    texts_a = [text.normalize_transcript(r.transcript_gt) for r in side_a]
    texts_b = [text.normalize_transcript(r.transcript_gt) for r in side_b]
    pairs = candidate_pairs([len(t) for t in texts_a], [len(t) for t in texts_b], cfg.max_length_ratio)
    if limit <= 0 or len(pairs) == 0:
        return []
    cost = text.pairwise_cer(texts_a, texts_b, pairs)
    return greedy_match(cost, pairs, [r.clip_id for r in side_a], [r.clip_id for r in side_b], limit)


def parallel_subset(m: DatasetManifest, pairs: list) -> DatasetManifest:
    chosen = {p.clip_a for p in pairs} | {p.clip_b for p in pairs}
    return DatasetManifest(tuple(r for r in m.records if r.clip_id in chosen), "parallel")


def save_pairs(pairs_by_language: dict, path) -> None:
    doc = [
        {"language": lang, "pairs": [[p.clip_a, p.clip_b, p.pair_cer] for p in pairs]}
        for lang, pairs in sorted(pairs_by_language.items())
    ]
    atomic_write_text(path, json.dumps(doc, ensure_ascii=False, indent=1) + "\n")


def load_pairs(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {
        entry["language"]: [PromptPair(a, b, float(c)) for a, b, c in entry["pairs"]] for entry in doc
    }


def apply_budget(m: DatasetManifest, cfg: SelectionConfig = SelectionConfig()) -> DatasetManifest:
    """Per speaker, the longest ascending-CER prefix whose total stays strictly under budget."""
    budget_s = cfg.budget_hours_per_speaker * 3600.0
    kept = []
    for speaker, recs in _group_by_speaker(m.records).items():
        total = 0.0
        n_kept = 0
        for r in sorted(recs, key=_cer_key):
            if total + r.duration_s >= budget_s:
                break
            total += r.duration_s
            kept.append(r)
            n_kept += 1
        if n_kept == 0:
            log.warning("budget: speaker %s keeps no clips (first clip exceeds %.2f h)", speaker, budget_s / 3600)
    return m.with_records(kept)


def split_train_val(m: DatasetManifest, cfg: SelectionConfig = SelectionConfig(), seed: int = 0) -> tuple:
    rng = np.random.default_rng(seed)
    train, val = [], []
    for recs in _group_by_speaker(m.records).values():
        n = len(recs)
        n_val = int(math.floor(cfg.val_fraction * n + 0.5))
        if n >= 2:
            n_val = min(max(n_val, 1), n - 1)
        else:
            n_val = 0
        perm = rng.permutation(n)
        chosen = set(perm[:n_val].tolist())
        for i, r in enumerate(recs):
            (val if i in chosen else train).append(r)
    return DatasetManifest(tuple(train), "train"), DatasetManifest(tuple(val), "val")
