"""Dataset manifest: clip records and their JSONL persistence.

One JSON object per line, UTF-8, keys in :data:`FIELDS` order, optional
fields omitted when unset. Records are always kept sorted by ``clip_id``.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

FIELDS = (
    "clip_id",
    "audio_path",
    "speaker_id",
    "language",
    "accent_id",
    "transcript_gt",
    "transcript_asr",
    "cer",
    "duration_s",
    "augmented_from",
    "formant_scale",
)
REQUIRED = ("clip_id", "audio_path", "speaker_id", "language", "accent_id", "transcript_gt", "duration_s")
SPLIT_TAGS = ("raw", "cleaned", "pruned", "parallel", "train", "val")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    audio_path: str
    speaker_id: str
    language: str
    accent_id: str
    transcript_gt: str
    duration_s: float
    transcript_asr: Optional[str] = None
    cer: Optional[float] = None
    augmented_from: Optional[str] = None
    formant_scale: Optional[float] = None

    def __post_init__(self):
        if not self.clip_id:
            raise ManifestError("clip_id must be non-empty")
        if not (self.duration_s > 0):
            raise ManifestError(f"{self.clip_id}: duration_s must be > 0, got {self.duration_s}")
        if self.cer is not None and not (self.cer >= 0):
            raise ManifestError(f"{self.clip_id}: cer must be >= 0, got {self.cer}")
        augmented = self.augmented_from is not None
        scaled = self.formant_scale is not None and self.formant_scale != 1.0
        if augmented != scaled:
            raise ManifestError(
                f"{self.clip_id}: augmented_from and a formant_scale != 1.0 must be set together"
            )
        if self.formant_scale is not None and not (self.formant_scale > 0):
            raise ManifestError(f"{self.clip_id}: formant_scale must be positive")

    def to_dict(self) -> dict:
        out = {}
        for name in FIELDS:
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ClipRecord":
        unknown = set(data) - set(FIELDS)
        if unknown:
            raise ManifestError(f"unknown fields: {sorted(unknown)}")
        missing = [k for k in REQUIRED if k not in data]
        if missing:
            raise ManifestError(f"missing fields: {missing}")
        return cls(**data)

    def with_(self, **changes) -> "ClipRecord":
        return replace(self, **changes)


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple = ()
    split_tag: str = "raw"

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise ManifestError(f"unknown split tag {self.split_tag!r}")
        recs = tuple(sorted(self.records, key=lambda r: r.clip_id))
        seen = set()
        for r in recs:
            if r.clip_id in seen:
                raise ManifestError(f"duplicate clip_id {r.clip_id!r}")
            seen.add(r.clip_id)
        object.__setattr__(self, "records", recs)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict:
        return {r.clip_id: r for r in self.records}

    def speakers(self) -> list:
        return sorted({r.speaker_id for r in self.records})

    def with_records(self, records: Iterable[ClipRecord], split_tag: Optional[str] = None) -> "DatasetManifest":
        return DatasetManifest(tuple(records), split_tag or self.split_tag)


def make_clip_id(audio_path: str, speaker_id: str, taken: Optional[set] = None) -> str:
    """Filename stem, prefixed with the speaker when the stem is already in ``taken``.

    The returned id is added to ``taken``.
    """
    cid = Path(audio_path).stem
    if taken is not None:
        if cid in taken:
            cid = f"{speaker_id}_{cid}"
        if cid in taken:
            raise ManifestError(f"clip id {cid!r} collides even with the speaker prefix")
        taken.add(cid)
    return cid


def dumps_record(record: ClipRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False, allow_nan=False)


def load_manifest(path, split_tag: Optional[str] = None) -> DatasetManifest:
    """Read a JSONL manifest.

    The split tag is not stored per line; pass it explicitly or it is taken
    from the file name (``<name>.<tag>.jsonl`` or ``<tag>.jsonl``), else ``raw``.
    """
    path = Path(path)
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                if not isinstance(data, dict):
                    raise ManifestError("expected a JSON object")
                rec = ClipRecord.from_dict(data)
            except (json.JSONDecodeError, ManifestError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            if rec.clip_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate clip_id {rec.clip_id!r}")
            seen.add(rec.clip_id)
            records.append(rec)
    if split_tag is None:
        parts = path.name.split(".")
        split_tag = parts[-2] if len(parts) >= 2 and parts[-2] in SPLIT_TAGS else "raw"
    return DatasetManifest(tuple(records), split_tag)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_manifest(m: DatasetManifest, path) -> None:
    text = "".join(dumps_record(r) + "\n" for r in m.records)
    atomic_write_text(path, text)


def summarize(m: DatasetManifest) -> dict:
    """Per ``(speaker_id, language)``: ``{"files": n, "hours": total / 3600}``."""
    groups: dict = {}
    for r in m.records:
        groups.setdefault((r.speaker_id, r.language), []).append(r.duration_s)
    return {
        key: {"files": len(durs), "hours": math.fsum(durs) / 3600.0}
        for key, durs in sorted(groups.items())
    }
