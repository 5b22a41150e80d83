"""Manifest-level DSP stages.

Each stage maps a per-file operation over the records of a manifest, writes
its outputs under ``out_dir`` with paths derived from the clip id, and
returns the updated manifest. Files that fail are logged and skipped.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from vani.dsp.audio import normalize_volume, read_wav, trim_silence, write_wav
from vani.dsp.config import DspConfig, DspError
from vani.dsp.features import featurize, save_features
from vani.dsp.formant import formant_scale
from vani.manifest import ClipRecord, DatasetManifest

log = logging.getLogger(__name__)

DEFAULT_SCALES = (0.875, 1.1)


def scale_tag(scale: float) -> str:
    return f"fs{scale:g}"


def _map(fn: Callable, records: Sequence[ClipRecord], threads: int) -> list:
    """Apply ``fn`` to every record, keeping input order; failures become None."""

    def guarded(r):
        try:
            return fn(r)
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", r.clip_id, exc)
            return None

    if threads <= 1:
        return [guarded(r) for r in records]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, records))


def _collect(m: DatasetManifest, results: list, split_tag=None) -> DatasetManifest:
    out = []
    for res in results:
        if res is None:
            continue
        out.extend(res if isinstance(res, list) else [res])
    return m.with_records(out, split_tag)


def trim_manifest(m: DatasetManifest, cfg: DspConfig, out_dir, threads: int = 1) -> DatasetManifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(r: ClipRecord) -> ClipRecord:
        w = trim_silence(read_wav(r.audio_path), cfg)
        path = out_dir / f"{r.clip_id}.wav"
        write_wav(path, w)
        return r.with_(audio_path=str(path), duration_s=w.duration_s)

    return _collect(m, _map(one, m.records, threads))


def normalize_manifest(m: DatasetManifest, cfg: DspConfig, out_dir, threads: int = 1) -> DatasetManifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(r: ClipRecord) -> ClipRecord:
        w = normalize_volume(read_wav(r.audio_path), cfg.peak_level)
        path = out_dir / f"{r.clip_id}.wav"
        write_wav(path, w)
        return r.with_(audio_path=str(path))

    return _collect(m, _map(one, m.records, threads))


def augment_manifest(
    m: DatasetManifest,
    cfg: DspConfig,
    out_dir,
    scales: Sequence[float] = DEFAULT_SCALES,
    threads: int = 1,
) -> DatasetManifest:
    """Keep every record and add one formant-scaled copy per scale.

    Each copy belongs to a new speaker ``"{orig}@fs{scale}"`` and keeps the
    accent and transcripts of its source.
    """
    scales = [float(s) for s in scales]
    if len(set(scales)) != len(scales):
        raise DspError(f"duplicate formant scales: {scales}")
    if any(s == 1.0 for s in scales):
        raise DspError("formant scale 1.0 would duplicate the source speaker")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(r: ClipRecord) -> list:
        w = read_wav(r.audio_path)
        out = [r]
        for s in scales:
            tag = scale_tag(s)
            clip_id = f"{r.clip_id}@{tag}"
            path = out_dir / f"{clip_id}.wav"
            write_wav(path, formant_scale(w, s, cfg))
            out.append(
                r.with_(
                    clip_id=clip_id,
                    audio_path=str(path),
                    speaker_id=f"{r.speaker_id}@{tag}",
                    augmented_from=r.clip_id,
                    formant_scale=s,
                )
            )
        return out

    return _collect(m, _map(one, m.records, threads))


def featurize_manifest(m: DatasetManifest, cfg: DspConfig, out_dir, threads: int = 1) -> DatasetManifest:
    """Write ``<clip_id>.vani`` feature files; records without features are dropped."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(r: ClipRecord) -> ClipRecord:
        save_features(featurize(read_wav(r.audio_path), cfg), out_dir / f"{r.clip_id}.vani")
        return r

    return _collect(m, _map(one, m.records, threads))
