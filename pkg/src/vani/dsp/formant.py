"""Formant scaling by cepstral envelope warping.

Each STFT frame's log magnitude is split into a smooth envelope (low
quefrencies of the real cepstrum) and a residual that carries the harmonic
fine structure. Only the envelope is stretched along frequency, so pitch is
left alone while formants move by the scale factor.
"""
from __future__ import annotations

import numpy as np

from vani.dsp.audio import Waveform
from vani.dsp.config import DspConfig, DspError
from vani.dsp.spectral import istft, stft

MIN_SCALE, MAX_SCALE = 0.5, 2.0
_EPS = 1e-10


def cepstral_envelope(log_mag: np.ndarray, n_fft: int, order: int) -> np.ndarray:
    """Lifter ``log_mag`` (bins x frames) to its first ``order`` quefrencies."""
    cep = np.fft.irfft(log_mag, n=n_fft, axis=0)
    lifter = np.zeros(n_fft)
    lifter[: order + 1] = 1.0
    lifter[n_fft - order :] = 1.0
    return np.fft.rfft(cep * lifter[:, None], n=n_fft, axis=0).real


def warp_envelope(env: np.ndarray, alpha: float) -> np.ndarray:
    """``E'(k) = E(k / alpha)`` by linear interpolation, clamped at the band edge."""
    bins = np.arange(env.shape[0], dtype=np.float64)
    src = bins / alpha
    out = np.empty_like(env)
    for t in range(env.shape[1]):
        out[:, t] = np.interp(src, bins, env[:, t])
    return out


def formant_scale(w: Waveform, alpha: float, cfg: DspConfig = DspConfig()) -> Waveform:
    if not (MIN_SCALE <= alpha <= MAX_SCALE):
        raise DspError(f"formant scale {alpha} outside [{MIN_SCALE}, {MAX_SCALE}]")
    spec = stft(w.samples, cfg.n_fft, cfg.hop, cfg.win)
    log_mag = np.log(np.abs(spec) + _EPS)
    env = cepstral_envelope(log_mag, cfg.n_fft, cfg.cepstral_order)
    residual = log_mag - env
    new_mag = np.exp(warp_envelope(env, alpha) + residual)
    phase = np.exp(1j * np.angle(spec))
    x = istft(new_mag * phase, cfg.n_fft, cfg.hop, cfg.win, len(w))
    return Waveform(x, w.sample_rate_hz)
