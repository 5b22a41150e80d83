"""Waveform container, WAV I/O, peak normalization and silence trimming."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from vani.dsp.config import DspConfig, DspError


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 22050

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise DspError("only mono audio is supported")
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


def read_wav(path) -> Waveform:
    """Read 8/16/32-bit PCM or float WAV into float64 samples in [-1, 1]."""
    sr, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise DspError(f"{path}: multi-channel audio is not supported")
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise DspError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(x, int(sr))


def write_wav(path, w: Waveform, fmt: str = "float32") -> None:
    if fmt == "float32":
        data = w.samples.astype(np.float32)
    elif fmt == "pcm16":
        data = np.round(np.clip(w.samples, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    else:
        raise DspError(f"unknown wav format {fmt!r}")
    wavfile.write(str(path), int(w.sample_rate_hz), data)


def normalize_volume(w: Waveform, peak: float = 0.95) -> Waveform:
    current = float(np.max(np.abs(w.samples))) if len(w) else 0.0
    if current <= 0.0:
        raise DspError("cannot normalize an all-zero signal")
    return Waveform(w.samples * (peak / current), w.sample_rate_hz)


def frame_rms(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    """RMS of centered rectangular frames (zero-padded), one per hop."""
    n_frames = 1 + len(x) // hop
    padded = np.pad(x, (win // 2, win // 2 + hop))
    sq = np.concatenate([[0.0], np.cumsum(padded**2)])
    starts = np.arange(n_frames) * hop
    return np.sqrt((sq[starts + win] - sq[starts]) / win)


def trim_silence(w: Waveform, cfg: DspConfig = DspConfig()) -> Waveform:
    """Cut leading/trailing silence and re-pad both ends with ``cfg.pad_s`` of zeros.

    Frames whose RMS is within ``trim_threshold_db`` of the loudest frame are
    non-silent. The cut points are then refined inside the first and last
    non-silent frames to the first/last sample whose magnitude clears the same
    threshold, so the boundary does not drift by half a window.
    """
    x = w.samples
    if len(x) == 0:
        raise DspError("no voiced frames: empty signal")
    rms = frame_rms(x, cfg.win, cfg.hop)
    ref = rms.max()
    if ref <= 0.0:
        raise DspError("no voiced frames: signal is silent")
    level = ref * 10.0 ** (-cfg.trim_threshold_db / 20.0)
    loud = np.flatnonzero(rms > level)
    half = cfg.win // 2
    lo = max(0, loud[0] * cfg.hop - half)
    hi = min(len(x), loud[-1] * cfg.hop + half)
    above = np.flatnonzero(np.abs(x[lo:hi]) > level)
    if above.size:
        start, end = lo + above[0], lo + above[-1] + 1
    else:
        start, end = lo, hi
    pad = np.zeros(int(round(cfg.pad_s * w.sample_rate_hz)))
    return Waveform(np.concatenate([pad, x[start:end], pad]), w.sample_rate_hz)
