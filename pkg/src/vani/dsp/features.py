"""Per-clip acoustic features and their flat binary file format.

Layout (little endian)::

    b"VANI" | u32 version | u32 n_mels | u32 n_frames | f64 hop_s | u32 sample_rate
    f32[n_mels * n_frames] mel (row-major) | f32[n_frames] f0 | f32[n_frames] energy
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vani.dsp.audio import Waveform
from vani.dsp.config import DspConfig, DspError
from vani.dsp.pitch import extract_f0
from vani.dsp.spectral import extract_energy, mel_spectrogram

MAGIC = b"VANI"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdI")


@dataclass(eq=False)
class MelFeatures:
    mel: np.ndarray
    f0_hz: np.ndarray
    energy: np.ndarray
    hop_s: float
    sample_rate_hz: int

    def __post_init__(self):
        n = self.mel.shape[1]
        if self.f0_hz.shape != (n,) or self.energy.shape != (n,):
            raise DspError("mel, f0 and energy must share the frame count")

    @property
    def n_frames(self) -> int:
        return self.mel.shape[1]


def featurize(w: Waveform, cfg: DspConfig = DspConfig()) -> MelFeatures:
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise DspError(f"expected {cfg.sample_rate_hz} Hz audio, got {w.sample_rate_hz} Hz")
    mel = mel_spectrogram(w, cfg)
    f0, _ = extract_f0(w, cfg)
    return MelFeatures(mel, f0, extract_energy(mel), cfg.hop_s, cfg.sample_rate_hz)


def save_features(feats: MelFeatures, path) -> None:
    mel = np.ascontiguousarray(feats.mel, dtype="<f4")
    n_mels, n_frames = mel.shape
    header = _HEADER.pack(MAGIC, VERSION, n_mels, n_frames, float(feats.hop_s), int(feats.sample_rate_hz))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(mel.tobytes())
        fh.write(np.asarray(feats.f0_hz, dtype="<f4").tobytes())
        # energy is re-derived from the stored f32 mel so it stays its exact column mean
        fh.write(extract_energy(mel.astype(np.float64)).astype("<f4").tobytes())


def load_features(path) -> MelFeatures:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DspError(f"{path}: truncated feature file")
    magic, version, n_mels, n_frames, hop_s, sr = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DspError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DspError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * (n_mels * n_frames + 2 * n_frames)
    if len(raw) != expected:
        raise DspError(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float32)
    mel = body[: n_mels * n_frames].reshape(n_mels, n_frames)
    f0 = body[n_mels * n_frames : n_mels * n_frames + n_frames]
    energy = body[n_mels * n_frames + n_frames :]
    return MelFeatures(mel, f0, energy, hop_s, sr)
