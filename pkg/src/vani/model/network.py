"""Mel-spectrogram synthesizer: text encoder, attribute predictors and a
two-direction autoregressive affine flow conditioned on text, accent, speaker,
F0 and energy.

Public arrays use channel-major layout (``mel`` is ``(n_mels, F)``, ``phi`` is
``(d_txt, T)``); everything internal is time-major.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from vani.model import layers as L
from vani.model.config import ModelConfig, ModelError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(eq=False)
class ConditioningSet:
    """Everything the flow is conditioned on for one utterance."""

    phi: np.ndarray
    accent_vec: np.ndarray
    speaker_vec: np.ndarray
    durations: np.ndarray
    f0: np.ndarray
    energy: np.ndarray

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=np.int64)
        if self.durations.shape != (self.phi.shape[1],):
            raise ModelError("need one duration per token")
        if np.any(self.durations < 1):
            raise ModelError("durations must be >= 1")
        n = int(self.durations.sum())
        if self.f0.shape != (n,) or self.energy.shape != (n,):
            raise ModelError(f"f0/energy must have sum(durations) = {n} frames")

    @property
    def n_frames(self) -> int:
        return int(self.durations.sum())


def uniform_durations(n_frames: int, n_tokens: int) -> np.ndarray:
    """Spread ``n_frames`` over ``n_tokens`` as evenly as integers allow."""
    if n_tokens < 1 or n_frames < n_tokens:
        raise ModelError(f"cannot spread {n_frames} frames over {n_tokens} tokens")
    edges = (np.arange(n_tokens + 1) * n_frames) // n_tokens
    return np.diff(edges)


def round_durations(raw: np.ndarray) -> np.ndarray:
    return np.maximum(1, np.rint(raw)).astype(np.int64)


def regulate_durations(phi: np.ndarray, durations, n_frames: Optional[int] = None) -> np.ndarray:
    """Repeat column ``i`` of ``phi`` ``durations[i]`` times."""
    durations = np.asarray(durations)
    if durations.shape != (phi.shape[1],):
        raise ModelError(f"{len(durations)} durations for {phi.shape[1]} tokens")
    if np.any(durations < 1):
        raise ModelError("zero or negative duration")
    if n_frames is not None and int(durations.sum()) != n_frames:
        raise ModelError(f"durations sum to {int(durations.sum())}, expected {n_frames}")
    return np.repeat(phi, durations, axis=1)


def _positions(durations: np.ndarray) -> np.ndarray:
    """Relative position (0, 1) of every frame inside its token."""
    reps = np.repeat(durations, durations)
    starts = np.repeat(np.cumsum(durations) - durations, durations)
    return (np.arange(int(durations.sum())) - starts + 0.5) / reps


def init_params(cfg: ModelConfig, seed: Optional[int] = None) -> dict:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    dt = cfg.np_dtype
    d, K, H, C = cfg.d_txt, cfg.enc_kernel, cfg.lstm_hidden, cfg.n_mels
    p: dict = {}

    def normal(shape, fan_in):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape).astype(dt)

    p["sym_emb"] = normal((cfg.n_symbols, d), d)
    for i in range(cfg.enc_layers):
        p[f"enc.{i}.w"] = normal((d, K, d), K * d)
        p[f"enc.{i}.b"] = np.zeros(d, dt)
    p["accent_emb"] = normal((cfg.n_accents, cfg.d_accent), cfg.d_accent)
    p["speaker_emb"] = normal((cfg.n_speakers, cfg.d_speaker), cfg.d_speaker)
    d_tok = d + cfg.d_accent + cfg.d_speaker
    for head, d_in in (("dur", d_tok), ("f0", d_tok + 1), ("energy", d_tok + 1)):
        p[f"{head}.w1"] = normal((cfg.predictor_hidden, d_in), d_in)
        p[f"{head}.b1"] = np.zeros(cfg.predictor_hidden, dt)
        p[f"{head}.w2"] = normal((1, cfg.predictor_hidden), cfg.predictor_hidden)
        p[f"{head}.b2"] = np.zeros(1, dt)
    bound = 1.0 / math.sqrt(H)
    for k in range(cfg.n_flow_steps):
        d_in = C + cfg.d_cond
        for layer in range(cfg.n_lstm_layers):
            pre = f"flow.{k}.lstm.{layer}"
            p[f"{pre}.w_ih"] = rng.uniform(-bound, bound, (4 * H, d_in)).astype(dt)
            p[f"{pre}.w_hh"] = rng.uniform(-bound, bound, (4 * H, H)).astype(dt)
            b = np.zeros(4 * H, dt)
            b[H : 2 * H] = 1.0
            p[f"{pre}.b"] = b
            d_in = H
        # zero head: every step starts as the identity map
        p[f"flow.{k}.head.w"] = np.zeros((2 * C, H), dt)
        p[f"flow.{k}.head.b"] = np.zeros(2 * C, dt)
        p[f"flow.{k}.go"] = np.zeros(C, dt)
    return p


def count_params(params: dict) -> int:
    return int(sum(np.asarray(v).size for v in params.values()))


@dataclass(eq=False)
class _StepCache:
    y: np.ndarray
    raw_s: np.ndarray
    s: np.ndarray
    z: np.ndarray
    inp: np.ndarray
    top: np.ndarray
    lstm: list = field(default_factory=list)


class VaniModel:
    """Parameters plus the forward, inverse and gradient computations."""

    def __init__(self, cfg: ModelConfig, params: Optional[dict] = None,
                 symbols: tuple = (), speakers: tuple = (), accents: tuple = ()):
        self.cfg = cfg
        self.params = init_params(cfg) if params is None else params
        self.symbols = tuple(symbols)
        self.speakers = tuple(speakers)
        self.accents = tuple(accents)

    # -- bookkeeping ---------------------------------------------------------

    @property
    def dtype(self):
        return self.cfg.np_dtype

    def count_params(self) -> int:
        return count_params(self.params)

    def _check_finite(self):
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise ModelError(f"non-finite values in parameter {name!r}")

    def speaker_index(self, speaker) -> int:
        return self._lookup(speaker, self.speakers, self.cfg.n_speakers, "speaker")

    def accent_index(self, accent) -> int:
        return self._lookup(accent, self.accents, self.cfg.n_accents, "accent")

    @staticmethod
    def _lookup(key, names, size, kind) -> int:
        if isinstance(key, (int, np.integer)):
            if not 0 <= key < size:
                raise ModelError(f"unknown {kind} index {key}")
            return int(key)
        if key not in names:
            raise ModelError(f"unknown {kind} {key!r}")
        return names.index(key)

    def _layers(self, k: int) -> list:
        p = self.params
        return [
            (p[f"flow.{k}.lstm.{i}.w_ih"], p[f"flow.{k}.lstm.{i}.w_hh"], p[f"flow.{k}.lstm.{i}.b"])
            for i in range(self.cfg.n_lstm_layers)
        ]

    # -- text ------------------------------------------------------------------

    def _encode(self, tokens):
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ModelError("token sequence must be a non-empty 1-D list")
        if ids.min() < 0 or ids.max() >= self.cfg.n_symbols:
            raise ModelError(f"token id out of range [0, {self.cfg.n_symbols})")
        h = self.params["sym_emb"][ids]
        caches = []
        for i in range(self.cfg.enc_layers):
            h, cache = L.conv_res_forward(h, self.params[f"enc.{i}.w"], self.params[f"enc.{i}.b"])
            caches.append(cache)
        return h, (ids, caches)

    def encode_text(self, tokens) -> np.ndarray:
        """Encoded text, shape ``(d_txt, T)``."""
        return self._encode(tokens)[0].T.copy()

    def embed(self, accent, speaker) -> tuple:
        return (
            self.params["accent_emb"][self.accent_index(accent)],
            self.params["speaker_emb"][self.speaker_index(speaker)],
        )

    # -- attribute predictors --------------------------------------------------

    def f0_feature(self, f0_hz):
        return (np.log1p(np.asarray(f0_hz, dtype=np.float64)) / math.log1p(self.cfg.f0_ref_hz)).astype(self.dtype)

    def f0_from_feature(self, feat):
        hz = np.expm1(np.asarray(feat, dtype=np.float64) * math.log1p(self.cfg.f0_ref_hz))
        return np.where(hz >= self.cfg.f0_min_hz, hz, 0.0)

    def energy_feature(self, energy):
        return ((np.asarray(energy) - self.cfg.mel_offset) / self.cfg.mel_scale).astype(self.dtype)

    def _token_features(self, phi_t, a_vec, s_vec):
        n = phi_t.shape[0]
        return np.concatenate([phi_t, np.tile(a_vec, (n, 1)), np.tile(s_vec, (n, 1))], axis=1)

    def _frame_features(self, ctx_t, a_vec, s_vec, durations):
        pos = _positions(durations).astype(self.dtype)[:, None]
        return np.concatenate([self._token_features(ctx_t, a_vec, s_vec), pos], axis=1)

    def _mlp(self, head, x):
        p = self.params
        return L.mlp_forward(x, p[f"{head}.w1"], p[f"{head}.b1"], p[f"{head}.w2"], p[f"{head}.b2"])

    def predict_raw_durations(self, phi, accent_vec, speaker_vec) -> np.ndarray:
        raw, _ = self._mlp("dur", self._token_features(phi.T, accent_vec, speaker_vec))
        return L.softplus(raw)

    def predict_attributes(self, phi, accent_vec, speaker_vec) -> tuple:
        """Integer durations per token, F0 (Hz) and energy per regulated frame."""
        durations = round_durations(self.predict_raw_durations(phi, accent_vec, speaker_vec))
        ctx_t = np.repeat(phi.T, durations, axis=0)
        feats = self._frame_features(ctx_t, accent_vec, speaker_vec, durations)
        f0_feat, _ = self._mlp("f0", feats)
        e_feat, _ = self._mlp("energy", feats)
        energy = e_feat * self.cfg.mel_scale + self.cfg.mel_offset
        return durations, self.f0_from_feature(f0_feat), energy.astype(self.dtype)

    # -- flow ------------------------------------------------------------------

    def _cond_frames(self, cond: ConditioningSet) -> np.ndarray:
        ctx_t = regulate_durations(cond.phi, cond.durations).T
        n = ctx_t.shape[0]
        return np.concatenate(
            [
                ctx_t,
                np.tile(cond.accent_vec, (n, 1)),
                np.tile(cond.speaker_vec, (n, 1)),
                self.f0_feature(cond.f0)[:, None],
                self.energy_feature(cond.energy)[:, None],
            ],
            axis=1,
        ).astype(self.dtype)

    def _prev_frames(self, k, y):
        go = self.params[f"flow.{k}.go"][None, :]
        prev = np.concatenate([go, y[:-1]], axis=0)
        return (prev - self.cfg.mel_offset) / self.cfg.mel_scale

    def _head(self, k, top):
        C = self.cfg.n_mels
        out = L.linear_forward(top, self.params[f"flow.{k}.head.w"], self.params[f"flow.{k}.head.b"])
        raw_s = out[..., C:]
        return out[..., :C], raw_s, np.clip(raw_s, -self.cfg.logsig_clamp, self.cfg.logsig_clamp)

    def _step_forward(self, k, y, cond_t) -> _StepCache:
        inp = np.concatenate([self._prev_frames(k, y), cond_t], axis=1)
        top, lstm_caches = L.lstm_stack_forward(inp, self._layers(k))
        mu, raw_s, s = self._head(k, top)
        z = (y - mu) * np.exp(-s)
        return _StepCache(y=y, raw_s=raw_s, s=s, z=z, inp=inp, top=top, lstm=lstm_caches)

    def _step_backward(self, k, dz, dlogdet, cache: _StepCache, grads: dict):
        """Back-propagate through one step; ``dlogdet`` is dLoss/d(log_det)."""
        C = self.cfg.n_mels
        inv_sigma = np.exp(-cache.s)
        ds = -dz * cache.z - dlogdet
        ds = np.where(np.abs(cache.raw_s) <= self.cfg.logsig_clamp, ds, 0.0)
        dmu = -dz * inv_sigma
        dy = dz * inv_sigma
        dout = np.concatenate([dmu, ds], axis=1).astype(self.dtype)
        dtop, dw, db = L.linear_backward(dout, cache.top, self.params[f"flow.{k}.head.w"])
        grads[f"flow.{k}.head.w"] += dw
        grads[f"flow.{k}.head.b"] += db
        dinp, lstm_grads = L.lstm_stack_backward(dtop, cache.lstm, self._layers(k))
        for i, (dw_ih, dw_hh, db_) in enumerate(lstm_grads):
            grads[f"flow.{k}.lstm.{i}.w_ih"] += dw_ih
            grads[f"flow.{k}.lstm.{i}.w_hh"] += dw_hh
            grads[f"flow.{k}.lstm.{i}.b"] += db_
        dprev = dinp[:, :C] / self.cfg.mel_scale
        grads[f"flow.{k}.go"] += dprev[0]
        dy[:-1] += dprev[1:]
        return dy, dinp[:, C:]

    def _step_inverse(self, k, z, cond_t):
        layers = self._layers(k)
        H = self.cfg.lstm_hidden
        state = [(np.zeros(H, self.dtype), np.zeros(H, self.dtype)) for _ in layers]
        y = np.empty_like(z)
        prev = self.params[f"flow.{k}.go"]
        for t in range(z.shape[0]):
            inp = np.concatenate([(prev - self.cfg.mel_offset) / self.cfg.mel_scale, cond_t[t]])
            top, state = L.lstm_stack_step(inp, layers, state)
            mu, _, s = self._head(k, top)
            y[t] = z[t] * np.exp(s) + mu
            prev = y[t]
        return y

    @staticmethod
    def _reversed(k) -> bool:
        return k % 2 == 1

    def _flow_forward_t(self, x_t, cond_t):
        caches = []
        cur = x_t
        for k in range(self.cfg.n_flow_steps):
            if self._reversed(k):
                cache = self._step_forward(k, cur[::-1].copy(), cond_t[::-1].copy())
                cur = cache.z[::-1].copy()
            else:
                cache = self._step_forward(k, cur, cond_t)
                cur = cache.z
            caches.append(cache)
        log_det = -sum(float(np.sum(c.s, dtype=np.float64)) for c in caches)
        return cur, log_det, caches

    def _flow_backward_t(self, dz, dlogdet, caches, grads):
        dcond = np.zeros((dz.shape[0], self.cfg.d_cond), dtype=self.dtype)
        for k in reversed(range(self.cfg.n_flow_steps)):
            if self._reversed(k):
                dy, dc = self._step_backward(k, dz[::-1].copy(), dlogdet, caches[k], grads)
                dz, dcond = dy[::-1].copy(), dcond + dc[::-1]
            else:
                dz, dc = self._step_backward(k, dz, dlogdet, caches[k], grads)
                dcond = dcond + dc
        return dz, dcond

    def _check_shapes(self, x, cond: ConditioningSet):
        if x.ndim != 2 or x.shape[0] != self.cfg.n_mels:
            raise ModelError(f"expected ({self.cfg.n_mels}, F) input, got {x.shape}")
        if x.shape[1] != cond.n_frames:
            raise ModelError(f"input has {x.shape[1]} frames, conditioning has {cond.n_frames}")

    def flow_forward(self, x, cond: ConditioningSet, return_stats: bool = False):
        """Map mel ``x`` (n_mels, F) to latent ``z`` (n_mels, F) and the log-determinant.

        With ``return_stats`` also returns the per-step ``(mu, logsigma)``
        arrays in processing order.
        """
        x = np.asarray(x, dtype=self.dtype)
        self._check_shapes(x, cond)
        self._check_finite()
        z_t, log_det, caches = self._flow_forward_t(x.T.copy(), self._cond_frames(cond))
        if return_stats:
            stats = [(c.y - c.z * np.exp(c.s), c.s) for c in caches]
            return z_t.T.copy(), log_det, stats
        return z_t.T.copy(), log_det

    def flow_inverse(self, z, cond: ConditioningSet) -> np.ndarray:
        z = np.asarray(z, dtype=self.dtype)
        self._check_shapes(z, cond)
        self._check_finite()
        cond_t = self._cond_frames(cond)
        cur = z.T.copy()
        for k in reversed(range(self.cfg.n_flow_steps)):
            if self._reversed(k):
                cur = self._step_inverse(k, cur[::-1].copy(), cond_t[::-1].copy())[::-1].copy()
            else:
                cur = self._step_inverse(k, cur, cond_t)
        return cur.T.copy()

    def nll(self, x, cond: ConditioningSet) -> float:
        """Negative log-likelihood per element under a standard-normal prior."""
        z, log_det = self.flow_forward(x, cond)
        n = z.size
        value = (0.5 * float(np.sum(z.astype(np.float64) ** 2)) + 0.5 * n * LOG_2PI - log_det) / n
        if not math.isfinite(value):
            raise ModelError("non-finite negative log-likelihood")
        return value

    # -- training objective ------------------------------------------------------

    def loss_and_grads(self, example) -> tuple:
        """Total loss terms and the gradient of their sum w.r.t. every parameter.

        ``example`` provides ``tokens``, ``speaker``, ``accent`` (indices),
        ``mel`` (n_mels, F), ``f0`` (Hz), ``energy`` and ``durations``.
        F0, energy and durations are teacher-forced into the flow.
        """
        p = self.params
        dt = self.dtype
        grads = {name: np.zeros_like(v) for name, v in p.items()}
        durations = np.asarray(example.durations, dtype=np.int64)
        mel_t = np.asarray(example.mel, dtype=dt).T.copy()
        n_frames, C = mel_t.shape
        if int(durations.sum()) != n_frames:
            raise ModelError("durations do not cover the mel frames")
        a_idx = self.accent_index(example.accent)
        s_idx = self.speaker_index(example.speaker)
        a_vec, s_vec = p["accent_emb"][a_idx], p["speaker_emb"][s_idx]
        d, da = self.cfg.d_txt, self.cfg.d_accent

        phi_t, (ids, enc_caches) = self._encode(example.tokens)
        n_tok = phi_t.shape[0]
        if durations.shape != (n_tok,):
            raise ModelError("need one duration per token")

        tok_feats = self._token_features(phi_t, a_vec, s_vec)
        raw_dur, h_dur = self._mlp("dur", tok_feats)
        dur_pred = L.softplus(raw_dur)
        dur_err = dur_pred - durations
        dur_loss = float(np.mean(dur_err.astype(np.float64) ** 2))

        ctx_t = np.repeat(phi_t, durations, axis=0)
        frame_feats = self._frame_features(ctx_t, a_vec, s_vec, durations)
        f0_target = self.f0_feature(example.f0)
        e_target = self.energy_feature(example.energy)
        f0_pred, h_f0 = self._mlp("f0", frame_feats)
        e_pred, h_e = self._mlp("energy", frame_feats)
        f0_loss = float(np.mean((f0_pred - f0_target).astype(np.float64) ** 2))
        e_loss = float(np.mean((e_pred - e_target).astype(np.float64) ** 2))

        cond_t = np.concatenate(
            [ctx_t, np.tile(a_vec, (n_frames, 1)), np.tile(s_vec, (n_frames, 1)), f0_target[:, None], e_target[:, None]],
            axis=1,
        ).astype(dt)
        z_t, log_det, caches = self._flow_forward_t(mel_t, cond_t)
        n = z_t.size
        nll = (0.5 * float(np.sum(z_t.astype(np.float64) ** 2)) + 0.5 * n * LOG_2PI - log_det) / n

        # flow
        _, dcond = self._flow_backward_t((z_t / n).astype(dt), -1.0 / n, caches, grads)
        dctx = dcond[:, :d].copy()
        da_vec = dcond[:, d : d + da].sum(axis=0)
        ds_vec = dcond[:, d + da : d + da + self.cfg.d_speaker].sum(axis=0)

        # frame-level predictors
        for head, pred, target, h in (("f0", f0_pred, f0_target, h_f0), ("energy", e_pred, e_target, h_e)):
            dpred = (2.0 / n_frames) * (pred - target)
            dx, dw1, db1, dw2, db2 = L.mlp_backward(dpred.astype(dt), frame_feats, h, p[f"{head}.w1"], p[f"{head}.w2"])
            grads[f"{head}.w1"] += dw1
            grads[f"{head}.b1"] += db1
            grads[f"{head}.w2"] += dw2
            grads[f"{head}.b2"] += db2
            dctx += dx[:, :d]
            da_vec += dx[:, d : d + da].sum(axis=0)
            ds_vec += dx[:, d + da : d + da + self.cfg.d_speaker].sum(axis=0)

        dphi = np.zeros_like(phi_t)
        np.add.at(dphi, np.repeat(np.arange(n_tok), durations), dctx)

        # duration predictor
        draw = ((2.0 / n_tok) * dur_err * L.sigmoid(raw_dur)).astype(dt)
        dx, dw1, db1, dw2, db2 = L.mlp_backward(draw, tok_feats, h_dur, p["dur.w1"], p["dur.w2"])
        grads["dur.w1"] += dw1
        grads["dur.b1"] += db1
        grads["dur.w2"] += dw2
        grads["dur.b2"] += db2
        dphi += dx[:, :d]
        da_vec += dx[:, d : d + da].sum(axis=0)
        ds_vec += dx[:, d + da :].sum(axis=0)

        # encoder and embeddings
        for i in reversed(range(self.cfg.enc_layers)):
            dphi, dw, db = L.conv_res_backward(dphi, enc_caches[i], p[f"enc.{i}.w"])
            grads[f"enc.{i}.w"] += dw
            grads[f"enc.{i}.b"] += db
        np.add.at(grads["sym_emb"], ids, dphi)
        grads["accent_emb"][a_idx] += da_vec
        grads["speaker_emb"][s_idx] += ds_vec

        losses = {"nll": nll, "dur_loss": dur_loss, "f0_loss": f0_loss, "energy_loss": e_loss}
        losses["total"] = nll + dur_loss + f0_loss + e_loss
        return losses, grads

    # -- inference ---------------------------------------------------------------

    def conditioning(self, tokens, accent, speaker) -> ConditioningSet:
        """Predicted conditioning for a token sequence (durations, F0, energy)."""
        phi = self.encode_text(tokens)
        a_vec, s_vec = self.embed(accent, speaker)
        durations, f0, energy = self.predict_attributes(phi, a_vec, s_vec)
        return ConditioningSet(phi, a_vec, s_vec, durations, f0.astype(self.dtype), energy)

    def synthesize(self, tokens, accent, speaker, temperature: Optional[float] = None, seed: int = 0) -> np.ndarray:
        """Sample a mel spectrogram ``(n_mels, F)``; ``F`` is the predicted total duration."""
        tau = self.cfg.temperature if temperature is None else temperature
        cond = self.conditioning(tokens, accent, speaker)
        rng = np.random.default_rng(seed)
        z = (tau * rng.standard_normal((self.cfg.n_mels, cond.n_frames))).astype(self.dtype)
        return self.flow_inverse(z, cond)
