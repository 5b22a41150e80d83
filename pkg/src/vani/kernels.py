"""Hot numeric kernels.

Every kernel exists twice: a numba-compiled version (``*_nb``) and a
pure-numpy version (``*_np``). The public name is bound to one of them
according to :data:`vani._jit.USE_NUMBA` (YIN always uses the FFT
version, see below). Both variants must agree to
floating tolerance; ``benchmarks/bench_kernels.py`` times them side by side.
"""
import numpy as np

from vani._jit import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Levenshtein distance over integer code arrays
# ---------------------------------------------------------------------------


@njit
def levenshtein_nb(a, b):
    n = a.shape[0]
    m = b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.empty(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for j in range(m + 1):
        prev[j] = j
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            up = prev[j] + 1
            if up < best:
                best = up
            left = cur[j - 1] + 1
            if left < best:
                best = left
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


# below this many DP cells, array-call overhead outweighs vectorizing a row
_SMALL_DP = 400


def _levenshtein_lists(a: list, b: list) -> int:
    prev = list(range(len(b) + 1))
    for i, ai in enumerate(a, 1):
        cur = [i]
        for j, bj in enumerate(b, 1):
            cur.append(min(prev[j - 1] + (ai != bj), prev[j] + 1, cur[j - 1] + 1))
        prev = cur
    return prev[-1]


def levenshtein_np(a, b):
    n = len(a)
    m = len(b)
    if n == 0:
        return m
    if m == 0:
        return n
    if n * m <= _SMALL_DP:
        return _levenshtein_lists(np.asarray(a).tolist(), np.asarray(b).tolist())
    a = np.asarray(a)
    b = np.asarray(b)
    cols = np.arange(m + 1, dtype=np.int64)
    prev = cols.copy()
    for i in range(1, n + 1):
        # substitution/deletion first, then resolve the left-to-right insertion
        # chain with a running minimum: cur[j] = j + min_{k<=j}(tmp[k] - k)
        tmp = np.empty(m + 1, dtype=np.int64)
        tmp[0] = i
        tmp[1:] = np.minimum(prev[:-1] + (a[i - 1] != b), prev[1:] + 1)
        prev = np.minimum.accumulate(tmp - cols) + cols
    return int(prev[m])


@njit
def pairwise_levenshtein_nb(codes, offsets, ia, ib):
    out = np.empty(ia.shape[0], dtype=np.int64)
    for k in range(ia.shape[0]):
        i = ia[k]
        j = ib[k]
        out[k] = levenshtein_nb(codes[offsets[i]:offsets[i + 1]], codes[offsets[j]:offsets[j + 1]])
    return out


def pairwise_levenshtein_np(codes, offsets, ia, ib):
    out = np.empty(len(ia), dtype=np.int64)
    for k in range(len(ia)):
        i = ia[k]
        j = ib[k]
        out[k] = levenshtein_np(codes[offsets[i]:offsets[i + 1]], codes[offsets[j]:offsets[j + 1]])
    return out


# ---------------------------------------------------------------------------
# YIN cumulative-mean-normalized difference
# ---------------------------------------------------------------------------


@njit
def yin_cmnd_nb(x, starts, window, max_lag):
    n_frames = starts.shape[0]
    out = np.ones((n_frames, max_lag + 1), dtype=np.float64)
    diff = np.zeros(max_lag + 1, dtype=np.float64)
    for f in range(n_frames):
        s = starts[f]
        for tau in range(1, max_lag + 1):
            acc = 0.0
            for j in range(window):
                d = x[s + j] - x[s + j + tau]
                acc += d * d
            diff[tau] = acc
        running = 0.0
        for tau in range(1, max_lag + 1):
            running += diff[tau]
            if running > 0.0:
                out[f, tau] = diff[tau] * tau / running
            else:
                out[f, tau] = 1.0
    return out


def yin_cmnd_np(x, starts, window, max_lag):
    starts = np.asarray(starts, dtype=np.int64)
    n_frames = len(starts)
    out = np.ones((n_frames, max_lag + 1), dtype=np.float64)
    if n_frames == 0:
        return out
    span = window + max_lag
    idx = starts[:, None] + np.arange(span)[None, :]
    frames = x[idx]
    # d(tau) = e(0) + e(tau) - 2 r(tau), windowed energies via cumulative sums
    sq = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(frames**2, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    energy_tau = sq[:, lags + window] - sq[:, lags]
    n_fft = 1 << int(np.ceil(np.log2(span + window)))
    spec_full = np.fft.rfft(frames, n_fft, axis=1)
    spec_head = np.fft.rfft(frames[:, :window], n_fft, axis=1)
    corr = np.fft.irfft(spec_full * np.conj(spec_head), n_fft, axis=1)[:, : max_lag + 1]
    diff = energy_tau[:, :1] + energy_tau - 2.0 * corr
    diff = np.maximum(diff, 0.0)
    diff[:, 0] = 0.0
    running = np.cumsum(diff[:, 1:], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cm = diff[:, 1:] * lags[1:] / running
    out[:, 1:] = np.where(running > 0.0, cm, 1.0)
    return out


# ---------------------------------------------------------------------------
# LSTM recurrence (input projection precomputed by the caller)
# gate layout along the 4H axis: input, forget, cell, output
# ---------------------------------------------------------------------------


@njit
def lstm_forward_nb(zx, U):
    n_steps = zx.shape[0]
    hidden = U.shape[1]
    hs = np.zeros((n_steps, hidden), dtype=zx.dtype)
    cs = np.zeros((n_steps, hidden), dtype=zx.dtype)
    gates = np.zeros((n_steps, 4 * hidden), dtype=zx.dtype)
    h = np.zeros(hidden, dtype=zx.dtype)
    c = np.zeros(hidden, dtype=zx.dtype)
    for t in range(n_steps):
        a = zx[t] + np.dot(U, h)
        for k in range(hidden):
            ig = 1.0 / (1.0 + np.exp(-a[k]))
            fg = 1.0 / (1.0 + np.exp(-a[hidden + k]))
            gg = np.tanh(a[2 * hidden + k])
            og = 1.0 / (1.0 + np.exp(-a[3 * hidden + k]))
            c[k] = fg * c[k] + ig * gg
            h[k] = og * np.tanh(c[k])
            gates[t, k] = ig
            gates[t, hidden + k] = fg
            gates[t, 2 * hidden + k] = gg
            gates[t, 3 * hidden + k] = og
        hs[t] = h
        cs[t] = c
    return hs, cs, gates


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def lstm_forward_np(zx, U):
    n_steps = zx.shape[0]
    hidden = U.shape[1]
    hs = np.zeros((n_steps, hidden), dtype=zx.dtype)
    cs = np.zeros((n_steps, hidden), dtype=zx.dtype)
    gates = np.zeros((n_steps, 4 * hidden), dtype=zx.dtype)
    h = np.zeros(hidden, dtype=zx.dtype)
    c = np.zeros(hidden, dtype=zx.dtype)
    for t in range(n_steps):
        a = zx[t] + U @ h
        g = np.empty_like(a)
        g[: 2 * hidden] = _sigmoid(a[: 2 * hidden])
        g[2 * hidden : 3 * hidden] = np.tanh(a[2 * hidden : 3 * hidden])
        g[3 * hidden :] = _sigmoid(a[3 * hidden :])
        c = g[hidden : 2 * hidden] * c + g[:hidden] * g[2 * hidden : 3 * hidden]
        h = g[3 * hidden :] * np.tanh(c)
        gates[t] = g
        hs[t] = h
        cs[t] = c
    return hs, cs, gates


@njit
def lstm_backward_nb(dhs, hs, cs, gates, U):
    """Gradient w.r.t. the pre-activations; caller forms dW, dU, db, dx."""
    n_steps = dhs.shape[0]
    hidden = U.shape[1]
    dz = np.zeros((n_steps, 4 * hidden), dtype=dhs.dtype)
    dh_next = np.zeros(hidden, dtype=dhs.dtype)
    dc_next = np.zeros(hidden, dtype=dhs.dtype)
    UT = np.ascontiguousarray(U.T)
    for t in range(n_steps - 1, -1, -1):
        for k in range(hidden):
            ig = gates[t, k]
            fg = gates[t, hidden + k]
            gg = gates[t, 2 * hidden + k]
            og = gates[t, 3 * hidden + k]
            tc = np.tanh(cs[t, k])
            dh = dhs[t, k] + dh_next[k]
            dc = dc_next[k] + dh * og * (1.0 - tc * tc)
            c_prev = cs[t - 1, k] if t > 0 else 0.0
            dz[t, k] = dc * gg * ig * (1.0 - ig)
            dz[t, hidden + k] = dc * c_prev * fg * (1.0 - fg)
            dz[t, 2 * hidden + k] = dc * ig * (1.0 - gg * gg)
            dz[t, 3 * hidden + k] = dh * tc * og * (1.0 - og)
            dc_next[k] = dc * fg
        dh_next[:] = np.dot(UT, dz[t])
    return dz


def lstm_backward_np(dhs, hs, cs, gates, U):
    n_steps = dhs.shape[0]
    hidden = U.shape[1]
    dz = np.zeros((n_steps, 4 * hidden), dtype=dhs.dtype)
    dh_next = np.zeros(hidden, dtype=dhs.dtype)
    dc_next = np.zeros(hidden, dtype=dhs.dtype)
    ig = gates[:, :hidden]
    fg = gates[:, hidden : 2 * hidden]
    gg = gates[:, 2 * hidden : 3 * hidden]
    og = gates[:, 3 * hidden :]
    tcs = np.tanh(cs)
    c_prev = np.concatenate([np.zeros((1, hidden), dtype=cs.dtype), cs[:-1]], axis=0)
    for t in range(n_steps - 1, -1, -1):
        dh = dhs[t] + dh_next
        dc = dc_next + dh * og[t] * (1.0 - tcs[t] ** 2)
        dz[t, :hidden] = dc * gg[t] * ig[t] * (1.0 - ig[t])
        dz[t, hidden : 2 * hidden] = dc * c_prev[t] * fg[t] * (1.0 - fg[t])
        dz[t, 2 * hidden : 3 * hidden] = dc * ig[t] * (1.0 - gg[t] ** 2)
        dz[t, 3 * hidden :] = dh * tcs[t] * og[t] * (1.0 - og[t])
        dc_next = dc * fg[t]
        dh_next = U.T @ dz[t]
    return dz


if USE_NUMBA:
    levenshtein = levenshtein_nb
    pairwise_levenshtein = pairwise_levenshtein_nb
    lstm_forward = lstm_forward_nb
    lstm_backward = lstm_backward_nb
else:
    levenshtein = levenshtein_np
    pairwise_levenshtein = pairwise_levenshtein_np
    lstm_forward = lstm_forward_np
    lstm_backward = lstm_backward_np

# The FFT difference function beats the direct numba loop at every window size
# the pitch tracker uses, so it serves both modes; the loop stays as a reference.
yin_cmnd = yin_cmnd_np
