"""STFT, mel filterbank, log-mel features, energy and Griffin-Lim inversion."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from vani.dsp.audio import Waveform
from vani.dsp.config import DspConfig, DspError


def hann(win: int, n_fft: int) -> np.ndarray:
    """Periodic Hann window of length ``win``, zero-padded to ``n_fft`` (centered)."""
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    left = (n_fft - win) // 2
    return np.pad(w, (left, n_fft - win - left))


def stft(x: np.ndarray, n_fft: int, hop: int, win: int) -> np.ndarray:
    """Centered STFT with reflect padding; shape ``(n_fft // 2 + 1, 1 + len(x) // hop)``."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < win:
        raise DspError(f"signal of {len(x)} samples is shorter than the window ({win})")
    mode = "reflect" if len(x) > n_fft // 2 else "constant"
    padded = np.pad(x, n_fft // 2, mode=mode)
    n_frames = 1 + len(x) // hop
    idx = np.arange(n_frames)[:, None] * hop + np.arange(n_fft)[None, :]
    frames = padded[idx] * hann(win, n_fft)[None, :]
    return np.fft.rfft(frames, axis=1).T


def istft(spec: np.ndarray, n_fft: int, hop: int, win: int, length: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    n_frames = spec.shape[1]
    window = hann(win, n_fft)
    frames = np.fft.irfft(spec.T, n=n_fft, axis=1) * window[None, :]
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    w2 = window**2
    for t in range(n_frames):
        out[t * hop : t * hop + n_fft] += frames[t]
        norm[t * hop : t * hop + n_fft] += w2
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out = out[n_fft // 2 :]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out[:length]


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    mel = f / f_sp
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, 1e-10) / min_log_hz) / logstep, mel)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_band_edges(cfg: DspConfig) -> np.ndarray:
    """The ``n_mels + 2`` band edge frequencies; filter k peaks at edge k + 1."""
    mels = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    return mel_to_hz(mels)


@lru_cache(maxsize=16)
def _mel_filterbank(cfg: DspConfig) -> np.ndarray:
    fft_freqs = np.linspace(0.0, cfg.sample_rate_hz / 2, cfg.n_fft // 2 + 1)
    edges = mel_band_edges(cfg)
    fdiff = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


def mel_filterbank(cfg: DspConfig) -> np.ndarray:
    """Triangular, area-normalized filters; shape ``(n_mels, n_fft // 2 + 1)``."""
    return _mel_filterbank(cfg)


def mel_spectrogram(w: Waveform, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Natural-log mel magnitudes, shape ``(n_mels, F)``."""
    mag = np.abs(stft(w.samples, cfg.n_fft, cfg.hop, cfg.win))
    return np.log(np.maximum(mel_filterbank(cfg) @ mag, cfg.log_floor))


def extract_energy(mel: np.ndarray) -> np.ndarray:
    mel = np.asarray(mel)
    if mel.size == 0:
        raise DspError("empty mel spectrogram")
    return mel.mean(axis=0)


def spectral_convergence(target_mag: np.ndarray, mag: np.ndarray) -> float:
    return float(np.linalg.norm(target_mag - mag) / max(np.linalg.norm(target_mag), 1e-12))


def mel_to_linear(mel: np.ndarray, cfg: DspConfig, refine_iters: int = 100) -> np.ndarray:
    """Non-negative linear magnitudes whose mel projection matches ``exp(mel)``.

    Starts from the clipped pseudo-inverse, then runs multiplicative
    non-negative least-squares updates.
    """
    fb = mel_filterbank(cfg)
    target = np.exp(mel)
    mag = np.maximum(np.linalg.pinv(fb) @ target, 1e-8)
    num = fb.T @ target
    for _ in range(refine_iters):
        mag *= num / (fb.T @ (fb @ mag) + 1e-12)
    return mag


def phase_recovery(
    mag: np.ndarray,
    cfg: DspConfig,
    length: int,
    iters: int = 60,
    momentum: float = 0.99,
    seed: int = 0,
) -> np.ndarray:
    """Accelerated Griffin-Lim: find a signal whose STFT magnitude approaches ``mag``."""
    n_frames = mag.shape[1]
    rng = np.random.default_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(mag.shape))
    prev = np.zeros_like(angles)
    for _ in range(iters):
        x = istft(mag * angles, cfg.n_fft, cfg.hop, cfg.win, length)
        rebuilt = stft(x, cfg.n_fft, cfg.hop, cfg.win)[:, :n_frames]
        accel = rebuilt - (momentum / (1.0 + momentum)) * prev
        prev = rebuilt
        angles = accel / np.maximum(np.abs(accel), 1e-16)
    return istft(mag * angles, cfg.n_fft, cfg.hop, cfg.win, length)


def griffin_lim(
    mel: np.ndarray,
    cfg: DspConfig = DspConfig(),
    iters: int = 60,
    seed: int = 0,
    length: int | None = None,
) -> Waveform:
    """Invert a log-mel spectrogram to audio (desk-scale stand-in for a vocoder)."""
    mag = mel_to_linear(mel, cfg)
    if length is None:
        length = (mag.shape[1] - 1) * cfg.hop
    length = max(length, cfg.win)
    x = phase_recovery(mag, cfg, length, iters=iters, seed=seed)
    return Waveform(np.clip(x, -1.0, 1.0), cfg.sample_rate_hz)
