"""Differentiable building blocks with explicit forward/backward passes.

Sequences are time-major ``(T, features)``. Every ``*_forward`` returns its
output and a cache tuple; the matching ``*_backward`` consumes the cache and
returns the input gradient plus parameter gradients.
"""
from __future__ import annotations

import numpy as np

from vani import kernels


def softplus(x):
    return np.logaddexp(0.0, x).astype(x.dtype, copy=False)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- dense -------------------------------------------------------------------


def linear_forward(x, w, b):
    return x @ w.T + b


def linear_backward(dy, x, w):
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def mlp_forward(x, w1, b1, w2, b2):
    """One tanh hidden layer, linear scalar output; returns ``(T,)``."""
    h = np.tanh(x @ w1.T + b1)
    return (h @ w2.T + b2)[:, 0], h


def mlp_backward(dy, x, h, w1, w2):
    dy = dy[:, None]
    dw2 = dy.T @ h
    db2 = dy.sum(axis=0)
    dpre = (dy @ w2) * (1.0 - h * h)
    dw1 = dpre.T @ x
    db1 = dpre.sum(axis=0)
    return dpre @ w1, dw1, db1, dw2, db2


# -- residual 1-D convolution ------------------------------------------------


def _patches(x, kernel):
    pad = kernel // 2
    xp = np.pad(x, ((pad, pad), (0, 0)))
    idx = np.arange(x.shape[0])[:, None] + np.arange(kernel)[None, :]
    return xp[idx].reshape(x.shape[0], -1)


def conv_res_forward(x, w, b):
    """``x + tanh(conv(x))`` with 'same' zero padding; ``w`` is ``(d_out, K, d_in)``."""
    kernel = w.shape[1]
    patches = _patches(x, kernel)
    h = np.tanh(patches @ w.reshape(w.shape[0], -1).T + b)
    return x + h, (patches, h)


def conv_res_backward(dy, cache, w):
    patches, h = cache
    n, (d_out, kernel, d_in) = dy.shape[0], w.shape
    dpre = dy * (1.0 - h * h)
    dw = (dpre.T @ patches).reshape(w.shape)
    db = dpre.sum(axis=0)
    dpatch = (dpre @ w.reshape(d_out, -1)).reshape(n, kernel, d_in)
    pad = kernel // 2
    dxp = np.zeros((n + 2 * pad, d_in), dtype=dy.dtype)
    for k in range(kernel):
        dxp[k : k + n] += dpatch[:, k]
    return dy + dxp[pad : pad + n], dw, db


# -- LSTM stack --------------------------------------------------------------


def lstm_stack_forward(x, layers):
    """Run stacked LSTM layers over a full sequence with zero initial state.

    ``layers`` is a list of ``(w_ih, w_hh, b)``. Returns the top hidden
    sequence and per-layer caches.
    """
    caches = []
    inp = x
    for w_ih, w_hh, b in layers:
        zx = np.ascontiguousarray(inp @ w_ih.T + b)
        hs, cs, gates = kernels.lstm_forward(zx, np.ascontiguousarray(w_hh))
        caches.append((inp, hs, cs, gates))
        inp = hs
    return inp, caches


def lstm_stack_backward(dh, caches, layers):
    grads = []
    for (w_ih, w_hh, b), (inp, hs, cs, gates) in zip(reversed(layers), reversed(caches)):
        dz = kernels.lstm_backward(np.ascontiguousarray(dh), hs, cs, gates, np.ascontiguousarray(w_hh))
        h_prev = np.concatenate([np.zeros((1, hs.shape[1]), dtype=hs.dtype), hs[:-1]], axis=0)
        grads.append((dz.T @ inp, dz.T @ h_prev, dz.sum(axis=0)))
        dh = dz @ w_ih
    grads.reverse()
    return dh, grads


def lstm_stack_step(x, layers, state):
    """Single time step for autoregressive inference; ``state`` is a list of (h, c)."""
    new_state = []
    inp = x
    for (w_ih, w_hh, b), (h, c) in zip(layers, state):
        a = w_ih @ inp + w_hh @ h + b
        hidden = h.shape[0]
        i = sigmoid(a[:hidden])
        f = sigmoid(a[hidden : 2 * hidden])
        g = np.tanh(a[2 * hidden : 3 * hidden])
        o = sigmoid(a[3 * hidden :])
        c = f * c + i * g
        h = o * np.tanh(c)
        new_state.append((h, c))
        inp = h
    return inp, new_state
