"""Reference computations written independently of the package under test."""
import numpy as np
from scipy import signal


def edit_distance_recursive(a: str, b: str, memo: dict) -> int:
    """Plain Levenshtein recursion with a shared memo keyed by the string pair."""
    key = (a, b)
    hit = memo.get(key)
    if hit is not None:
        return hit
    if not a:
        d = len(b)
    elif not b:
        d = len(a)
    else:
        d = min(
            edit_distance_recursive(a[1:], b, memo) + 1,
            edit_distance_recursive(a, b[1:], memo) + 1,
            edit_distance_recursive(a[1:], b[1:], memo) + (a[0] != b[0]),
        )
    memo[key] = d
    return d


def source_filter_vowel(sr: int, seconds: float, f0: float, formant_hz: float, bandwidth_hz: float = 100.0):
    """Impulse train through a two-pole resonator."""
    n = int(sr * seconds)
    excitation = np.zeros(n)
    excitation[:: int(round(sr / f0))] = 1.0
    r = np.exp(-np.pi * bandwidth_hz / sr)
    theta = 2 * np.pi * formant_hz / sr
    x = signal.lfilter([1 - r], [1, -2 * r * np.cos(theta), r * r], excitation)
    return 0.5 * x / np.max(np.abs(x))


def envelope_peak_hz(x: np.ndarray, sr: int, n_fft: int = 1024, hop: int = 256, order: int = 30) -> float:
    """Peak of the frame-averaged cepstrally smoothed log spectrum, parabolic-refined."""
    _, _, z = signal.stft(x, fs=sr, window="hann", nperseg=n_fft, noverlap=n_fft - hop, boundary=None, padded=False)
    log_mag = np.log(np.abs(z) + 1e-9)
    cep = np.fft.irfft(log_mag, n=n_fft, axis=0)
    cep[order + 1 : n_fft - order] = 0.0
    env = np.fft.rfft(cep, n=n_fft, axis=0).real[:, 4:-4].mean(axis=1)
    k = int(np.argmax(env[1:-1])) + 1
    a, b, c = env[k - 1], env[k], env[k + 1]
    k_ref = k + 0.5 * (a - c) / (a - 2 * b + c)
    return k_ref * sr / n_fft


def autocorr_f0(x: np.ndarray, sr: int, fmin: float = 60.0, fmax: float = 400.0) -> float:
    """Pitch of a stationary signal from its autocorrelation peak."""
    x = x - x.mean()
    ac = signal.correlate(x, x, mode="full", method="fft")[len(x) - 1 :]
    lo, hi = int(sr / fmax), int(sr / fmin)
    k = lo + int(np.argmax(ac[lo:hi]))
    a, b, c = ac[k - 1], ac[k], ac[k + 1]
    return sr / (k + 0.5 * (a - c) / (a - 2 * b + c))


def dominant_frequency(x: np.ndarray, sr: int) -> float:
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    k = int(np.argmax(spec[1:-1])) + 1
    a, b, c = np.log(spec[k - 1 : k + 2] + 1e-300)
    return (k + 0.5 * (a - c) / (a - 2 * b + c)) * sr / len(x)


def slaney_mel(f):
    """Slaney auditory mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    lin = f / (200.0 / 3)
    log = 15.0 + np.log(np.maximum(f, 1e-10) / 1000.0) / (np.log(6.4) / 27.0)
    return np.where(f < 1000.0, lin, log)


def slaney_filterbank(sr, n_fft, n_mels, fmin, fmax):
    """Triangles with Slaney area normalization, one row per filter (loop form)."""
    mel_pts = np.linspace(slaney_mel(fmin), slaney_mel(fmax), n_mels + 2)
    # invert the mel scale by bisection, independent of any closed form
    hz_pts = []
    for m in mel_pts:
        lo, hi = 0.0, sr
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if slaney_mel(mid) < m else (lo, mid)
        hz_pts.append(0.5 * (lo + hi))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    fb = np.zeros((n_mels, len(freqs)))
    for i in range(n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        for k, f in enumerate(freqs):
            if left < f <= center:
                fb[i, k] = (f - left) / (center - left)
            elif center < f < right:
                fb[i, k] = (right - f) / (right - center)
        fb[i] *= 2.0 / (right - left)
    return fb


def numeric_jacobian(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function of a flat vector."""
    y0 = np.asarray(fn(x)).ravel()
    jac = np.zeros((y0.size, x.size))
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        jac[:, i] = (np.asarray(fn(xp)).ravel() - np.asarray(fn(xm)).ravel()) / (2 * eps)
    return jac
