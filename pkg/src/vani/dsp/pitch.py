"""YIN fundamental-frequency tracking on the mel frame grid."""
from __future__ import annotations

import numpy as np

from vani import kernels
from vani.dsp.audio import Waveform
from vani.dsp.config import DspConfig


def _pick_lag(cmnd: np.ndarray, lo: int, hi: int, threshold: float) -> float:
    """First dip below ``threshold`` in ``[lo, hi]``, refined to its local minimum
    and then by a parabola through the neighbours. Returns 0.0 when unvoiced."""
    below = np.flatnonzero(cmnd[lo : hi + 1] < threshold)
    if below.size == 0:
        return 0.0
    tau = lo + below[0]
    while tau + 1 <= hi and cmnd[tau + 1] < cmnd[tau]:
        tau += 1
    if 1 <= tau < len(cmnd) - 1:
        a, b, c = cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]
        denom = a - 2.0 * b + c
        if denom > 0.0:
            return tau + 0.5 * (a - c) / denom
    return float(tau)


def extract_f0(w: Waveform, cfg: DspConfig = DspConfig()) -> tuple:
    """Per-frame F0 in Hz (0 where unvoiced) and the voiced mask.

    Frame ``i`` is centered on sample ``i * hop``, matching
    :func:`vani.dsp.spectral.mel_spectrogram`, so both have ``1 + len // hop``
    frames.
    """
    sr = w.sample_rate_hz
    frame_len = cfg.n_fft
    max_lag = min(int(np.ceil(sr / cfg.f0_min_hz)) + 1, frame_len // 2)
    window = frame_len - max_lag
    lo = max(2, int(np.floor(sr / cfg.f0_max_hz)))
    hi = max_lag - 1
    n_frames = 1 + len(w) // cfg.hop
    padded = np.pad(w.samples, (frame_len // 2, frame_len))
    starts = np.arange(n_frames, dtype=np.int64) * cfg.hop
    cmnd = kernels.yin_cmnd(padded, starts, window, max_lag)
    f0 = np.zeros(n_frames)
    for i in range(n_frames):
        lag = _pick_lag(cmnd[i], lo, hi, cfg.yin_threshold)
        if lag > 0.0:
            hz = sr / lag
            if cfg.f0_min_hz <= hz <= cfg.f0_max_hz:
                f0[i] = hz
    return f0, f0 > 0.0
