"""Seeded synthetic corpus for desk-scale runs of the whole pipeline.

Speech is replaced by additive vowel synthesis: every character is a
fixed-length steady vowel (two formant peaks over a harmonic source), spaces
are short pauses. Speakers differ in F0 and vocal-tract scale, accents in
intonation slope. Stand-ins for the external ASR and speaker embedder live
here too.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from vani import text
from vani.dsp import DspConfig, Waveform, write_wav
from vani.manifest import ClipRecord, DatasetManifest, atomic_write_text, save_manifest
from vani.model.config import ModelConfig

TOY_DSP = DspConfig(
    sample_rate_hz=16000,
    n_fft=512,
    hop=128,
    win=512,
    n_mels=40,
    fmax_hz=8000.0,
    pad_s=0.048,
    f0_max_hz=400.0,
)

TOY_MODEL = ModelConfig(
    n_mels=40,
    d_txt=32,
    d_accent=4,
    d_speaker=8,
    n_lstm_layers=2,
    lstm_hidden=32,
    predictor_hidden=32,
    enc_layers=2,
    enc_kernel=3,
    n_symbols=16,
    n_speakers=3,
    n_accents=2,
    lr=2e-3,
)

# (F1, F2) in Hz
VOWELS = {
    "a": (730.0, 1090.0),
    "e": (530.0, 1840.0),
    "i": (270.0, 2290.0),
    "o": (570.0, 840.0),
    "u": (300.0, 870.0),
    "y": (440.0, 1020.0),
    "w": (640.0, 1190.0),
}
ALPHABETS = {"lang_a": "aeiou", "lang_b": "aiuyw"}
ACCENTS = {"lang_a": "acc_a", "lang_b": "acc_b"}


@dataclass(frozen=True)
class ToySpeaker:
    speaker_id: str
    language: str
    f0_hz: float
    tract_scale: float
    n_clips: int


SPEAKERS = (
    ToySpeaker("spk_a1", "lang_a", 110.0, 1.0, 17),
    ToySpeaker("spk_a2", "lang_a", 200.0, 1.15, 17),
    ToySpeaker("spk_b1", "lang_b", 150.0, 0.92, 16),
)

FRAMES_PER_CHAR = 6
# intonation slope over the utterance, per accent
CONTOURS = {"acc_a": (1.1, 0.9), "acc_b": (0.9, 1.1)}


def random_sentence(rng: np.random.Generator, alphabet: str) -> str:
    words = ["".join(rng.choice(list(alphabet), size=rng.integers(2, 4))) for _ in range(rng.integers(2, 4))]
    return " ".join(words)


def render(sentence: str, spk: ToySpeaker, accent: str, cfg: DspConfig, rng: np.random.Generator,
           gain: float = 0.5, lead_s: float = 0.2, tail_s: float = 0.2) -> Waveform:
    sr = cfg.sample_rate_hz
    seg = FRAMES_PER_CHAR * cfg.hop
    n = seg * len(sentence)
    start, end = CONTOURS[accent]
    f0 = spk.f0_hz * np.linspace(start, end, n)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    n_harm = int(cfg.fmax_hz // (spk.f0_hz * max(start, end)))
    k = np.arange(1, n_harm + 1)
    amps = np.zeros((n, n_harm))
    for i, ch in enumerate(sentence):
        if ch not in VOWELS:
            continue
        # spectral envelope sampled at the harmonics of the segment's mean F0
        fk = k * f0[i * seg : (i + 1) * seg].mean()
        env = sum(1.0 / (1.0 + ((fk - f * spk.tract_scale) / 90.0) ** 2) for f in VOWELS[ch])
        amps[i * seg : (i + 1) * seg] = env * (fk / 1000.0 + 1.0) ** -1.0
    # short linear cross-fades between segments
    kernel = np.ones(cfg.hop // 2) / (cfg.hop // 2)
    amps = np.apply_along_axis(lambda a: np.convolve(a, kernel, mode="same"), 0, amps)
    voiced = np.einsum("tk,tk->t", amps, np.sin(np.outer(phase, k)))
    voiced *= gain / max(np.abs(voiced).max(), 1e-12)
    lead = np.zeros(int(lead_s * sr))
    tail = np.zeros(int(tail_s * sr))
    x = np.concatenate([lead, voiced, tail])
    x += 10 ** (-75 / 20) * rng.standard_normal(len(x))
    return Waveform(x, sr)


def corrupt(sentence: str, alphabet: str, rate: float, rng: np.random.Generator) -> str:
    chars = list(sentence)
    for i, c in enumerate(chars):
        if c != " " and rng.random() < rate:
            chars[i] = alphabet[rng.integers(len(alphabet))]
    return "".join(chars)


@dataclass(frozen=True)
class ToyCorpus:
    manifest_path: Path
    hypotheses_path: Path
    prompts_path: Path
    manifest: DatasetManifest


def write_toy_corpus(out_dir, seed: int = 0, with_defects: bool = True, cfg: DspConfig = TOY_DSP) -> ToyCorpus:
    """Write wavs, ``raw.jsonl``, ASR hypotheses and prompt texts under ``out_dir``.

    Speakers of the same language share a sentence pool so parallel selection
    has near-identical transcripts to pair. ``with_defects`` adds one empty
    wav and one duplicate transcript for the cleaning stage to remove.
    """
    # absolute audio paths keep the manifest usable from any working directory
    out = Path(out_dir).resolve()
    (out / "wavs").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    pools = {lang: [random_sentence(rng, a) for _ in range(14)] for lang, a in sorted(ALPHABETS.items())}
    records, hyps = [], {}
    used: set = set()
    seen_language: set = set()
    for spk in SPEAKERS:
        accent = ACCENTS[spk.language]
        alphabet = ALPHABETS[spk.language]
        pool = pools[spk.language]
        # the second speaker of a language reads perturbed copies of the first one's
        # sentences: near-parallel, but never exact duplicates (those are cleaned away)
        follower = spk.language in seen_language
        seen_language.add(spk.language)
        for i in range(spk.n_clips):
            sentence = pool[i] if i < len(pool) else random_sentence(rng, alphabet)
            while sentence in used:
                sentence = corrupt(sentence, alphabet, 0.25, rng) if follower and i < len(pool) else random_sentence(rng, alphabet)
            used.add(sentence)
            clip_id = f"{spk.speaker_id}_{i:03d}"
            wav = render(sentence, spk, accent, cfg, rng, gain=rng.uniform(0.2, 0.8),
                         lead_s=rng.uniform(0.15, 0.3), tail_s=rng.uniform(0.15, 0.3))
            path = out / "wavs" / f"{clip_id}.wav"
            write_wav(path, wav)
            records.append(ClipRecord(clip_id, str(path), spk.speaker_id, spk.language, accent, sentence, wav.duration_s))
            hyps[clip_id] = corrupt(sentence, alphabet, rng.uniform(0.0, 0.4), rng)
    if with_defects:
        first = records[0]
        empty = out / "wavs" / f"{first.clip_id}_empty.wav"
        write_wav(empty, Waveform(np.zeros(0), cfg.sample_rate_hz))
        # ids sort after the original, so deduplication keeps the original
        records.append(first.with_(clip_id=f"{first.clip_id}_empty", audio_path=str(empty), transcript_gt="oi ua"))
        records.append(first.with_(clip_id=f"{first.clip_id}_dup"))
        hyps[f"{first.clip_id}_empty"] = "oi ua"
        hyps[f"{first.clip_id}_dup"] = hyps[first.clip_id]
    manifest = DatasetManifest(tuple(records), "raw")
    save_manifest(manifest, out / "raw.jsonl")
    hyp_path = out / "asr.jsonl"
    atomic_write_text(hyp_path, "".join(
        json.dumps({"clip_id": cid, "transcript_asr": h}) + "\n" for cid, h in sorted(hyps.items())))
    prompt_rng = np.random.default_rng([seed, 1])
    prompts = {lang: [random_sentence(prompt_rng, a) for _ in range(20)] for lang, a in sorted(ALPHABETS.items())}
    prompts_path = out / "prompt_texts.json"
    atomic_write_text(prompts_path, json.dumps(prompts, indent=1, sort_keys=True) + "\n")
    return ToyCorpus(out / "raw.jsonl", hyp_path, prompts_path, manifest)


def toy_model_config(table: text.SymbolTable, speakers: list, accents: list, **overrides) -> ModelConfig:
    return replace(TOY_MODEL, n_symbols=len(table.symbols), n_speakers=len(speakers), n_accents=len(accents), **overrides)


# -- stand-ins for the external tools ----------------------------------------------


def _frame_shape(mel: np.ndarray) -> np.ndarray:
    """Spectral shape per frame: each column minus its channel mean."""
    mel = np.asarray(mel, dtype=np.float64)
    return mel - mel.mean(axis=0, keepdims=True)


def mel_embedding(mel: np.ndarray) -> np.ndarray:
    """Speaker-embedding stand-in: mean spectral shape of the louder half of the frames."""
    mel = np.asarray(mel, dtype=np.float64)
    energy = mel.mean(axis=0)
    loud = energy >= np.median(energy)
    v = _frame_shape(mel)[:, loud].mean(axis=1)
    v = v - v.mean()
    if not np.any(v):
        v = np.ones_like(v)
    return v


class TemplateRecognizer:
    """ASR stand-in: nearest per-character spectral template over token segments.

    Segments come from the durations the synthesizer used, so the recognizer
    only measures whether each segment renders the right vowel.
    """

    def __init__(self, templates: dict):
        self.templates = dict(sorted(templates.items()))
        self._chars = list(self.templates)
        self._mat = np.stack([self.templates[c] for c in self._chars]) if self._chars else np.zeros((0, 0))

    @classmethod
    def fit(cls, examples: list) -> "TemplateRecognizer":
        """``examples``: iterable of (transcript, mel, durations) with BOS/EOS durations included."""
        sums: dict = {}
        for transcript, mel, durations in examples:
            chars = text.graphemes(text.normalize_transcript(transcript))
            shape = _frame_shape(mel)
            edges = np.concatenate([[0], np.cumsum(durations)])
            for i, c in enumerate(chars, start=1):
                seg = shape[:, edges[i] : edges[i + 1]].mean(axis=1)
                acc = sums.setdefault(c, [np.zeros_like(seg), 0])
                acc[0] += seg
                acc[1] += 1
        return cls({c: s / n for c, (s, n) in sums.items()})

    def transcribe(self, mel: np.ndarray, durations) -> str:
        shape = _frame_shape(mel)
        edges = np.concatenate([[0], np.cumsum(durations)])
        out = []
        for i in range(1, len(durations) - 1):
            seg = shape[:, edges[i] : edges[i + 1]].mean(axis=1)
            out.append(self._chars[int(np.argmin(((self._mat - seg) ** 2).sum(axis=1)))])
        return text.normalize_transcript("".join(out))
