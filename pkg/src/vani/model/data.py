"""Training examples from a featurized manifest."""
from __future__ import annotations

from pathlib import Path

from vani import text
from vani.dsp import load_features
from vani.manifest import DatasetManifest
from vani.model.train import TrainingExample


def inventories(m: DatasetManifest) -> tuple:
    """Sorted speaker and accent names; their positions are the embedding rows."""
    return m.speakers(), sorted({r.accent_id for r in m.records})


def build_examples(m: DatasetManifest, features_dir, table: text.SymbolTable,
                   speakers: list, accents: list) -> list:
    out = []
    for r in m.records:
        feats = load_features(Path(features_dir) / f"{r.clip_id}.vani")
        out.append(
            TrainingExample(
                clip_id=r.clip_id,
                tokens=text.tokenize(r.transcript_gt, table),
                speaker=speakers.index(r.speaker_id),
                accent=accents.index(r.accent_id),
                mel=feats.mel,
                f0=feats.f0_hz,
                energy=feats.energy,
            )
        )
    return out
