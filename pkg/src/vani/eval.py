"""Evaluation harness: CER, speaker-embedding cosine similarity and the
resynthesis / transfer protocols.

ASR transcripts and speaker embeddings come from external tools through
files (``{clip_id, transcript_asr}`` and ``{clip_id, dim, vector}`` JSONL).
For desk runs, in-process stand-ins can be passed as callables instead.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from vani import text
from vani.dsp import DspConfig, MelFeatures, extract_energy, griffin_lim, mel_spectrogram, save_features, write_wav
from vani.manifest import ClipRecord, DatasetManifest, atomic_write_text, save_manifest

log = logging.getLogger(__name__)

TASKS = ("resynthesis", "transfer")
PROMPTS_PER_TASK = {"resynthesis": 10, "transfer": 50}


class EvalError(ValueError):
    pass


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise EvalError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise EvalError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


# -- embeddings --------------------------------------------------------------


@dataclass(eq=False)
class EmbeddingSet:
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = {np.asarray(v).shape for v in self.entries.values()}
        if len(dims) > 1:
            raise EvalError(f"mixed embedding dimensions: {sorted(dims)}")
        for cid, vec in self.entries.items():
            if not np.all(np.isfinite(vec)):
                raise EvalError(f"non-finite embedding for {cid!r}")
        self.entries = {k: np.asarray(v, dtype=np.float64) for k, v in sorted(self.entries.items())}

    def __len__(self):
        return len(self.entries)

    def save(self, path) -> None:
        lines = []
        for cid, vec in self.entries.items():
            vals = np.asarray(vec, dtype=np.float64).tolist()
            lines.append(json.dumps({"clip_id": cid, "dim": len(vals), "vector": vals}))
        atomic_write_text(path, "".join(line + "\n" for line in lines))

    @classmethod
    def load(cls, path) -> "EmbeddingSet":
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                row = json.loads(line)
                vec = np.asarray(row["vector"], dtype=np.float64)
                if vec.shape != (row["dim"],):
                    raise EvalError(f"{path}:{lineno}: dim {row['dim']} != vector length {len(vec)}")
                entries[row["clip_id"]] = vec
        return cls(entries)


def speaker_similarity(synth: EmbeddingSet, gt: EmbeddingSet, synth_speakers: dict, gt_speakers: dict) -> dict:
    """Mean cosine of each synthesized clip to its speaker's ground-truth centroid."""
    centroids: dict = {}
    for cid, vec in gt.entries.items():
        centroids.setdefault(gt_speakers[cid], []).append(vec)
    centroids = {spk: np.mean(vecs, axis=0) for spk, vecs in centroids.items()}
    scores: dict = {}
    for cid, vec in synth.entries.items():
        spk = synth_speakers[cid]
        if spk not in centroids:
            raise EvalError(f"no ground-truth embeddings for speaker {spk!r}")
        scores.setdefault(spk, []).append(cosine_similarity(vec, centroids[spk]))
    return {spk: float(np.mean(v)) for spk, v in sorted(scores.items())}


def cer_eval(hyps: dict, gt: DatasetManifest) -> dict:
    """Mean CER per speaker of ``hyps[clip_id]`` against each record's transcript."""
    per: dict = {}
    for r in gt.records:
        if r.clip_id not in hyps:
            raise EvalError(f"no hypothesis for clip {r.clip_id!r}")
        per.setdefault(r.speaker_id, []).append(text.cer(r.transcript_gt, hyps[r.clip_id]))
    return {spk: float(np.mean(v)) for spk, v in sorted(per.items())}


# -- prompts -----------------------------------------------------------------


@dataclass(frozen=True)
class Prompt:
    prompt_id: str
    speaker_id: str
    accent_id: str
    language: str
    text: str
    task: str


def save_prompts(prompts: list, path) -> None:
    atomic_write_text(path, "".join(json.dumps(asdict(p), ensure_ascii=False) + "\n" for p in prompts))


def load_prompts(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [Prompt(**json.loads(line)) for line in fh if line.strip()]


def make_prompts(
    texts_by_language: dict,
    speaker_language: dict,
    accent_of_language: dict,
    n_resynthesis: int = PROMPTS_PER_TASK["resynthesis"],
    n_transfer: int = PROMPTS_PER_TASK["transfer"],
) -> list:
    """Own-language prompts (resynthesis) and other-language prompts (transfer).

    Transfer prompts carry the target language's native accent. Text pools
    are consumed in order and cycled when too short.
    """
    prompts = []
    for spk, own in sorted(speaker_language.items()):
        pool = texts_by_language[own]
        if not pool:
            raise EvalError(f"no prompt texts for language {own!r}")
        for i in range(n_resynthesis):
            prompts.append(Prompt(f"{spk}-resyn-{i:03d}", spk, accent_of_language[own], own, pool[i % len(pool)], "resynthesis"))
        others = [lang for lang in sorted(texts_by_language) if lang != own and texts_by_language[lang]]
        if not others and n_transfer:
            raise EvalError(f"no other-language texts for speaker {spk!r}")
        cursor = dict.fromkeys(others, 0)
        for i in range(n_transfer):
            lang = others[i % len(others)]
            pool = texts_by_language[lang]
            prompts.append(Prompt(f"{spk}-xfer-{i:03d}", spk, accent_of_language[lang], lang, pool[cursor[lang] % len(pool)], "transfer"))
            cursor[lang] += 1
    return prompts


# -- report ------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    speaker: str
    task: str
    mean_cer: float
    mean_cosine: float
    n_prompts: int


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def __post_init__(self):
        order = {t: i for i, t in enumerate(TASKS)}
        self.rows = sorted(self.rows, key=lambda r: (r.speaker, order.get(r.task, len(order))))

    def overall(self) -> dict:
        out = {}
        for task in TASKS:
            rows = [r for r in self.rows if r.task == task]
            if rows:
                out[task] = {
                    "mean_cer": float(np.mean([r.mean_cer for r in rows])),
                    "mean_cosine": float(np.mean([r.mean_cosine for r in rows])),
                    "n_prompts": int(sum(r.n_prompts for r in rows)),
                }
        return out

    def to_json(self) -> str:
        doc = {"rows": [asdict(r) for r in self.rows], "overall": self.overall()}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, s: str) -> "EvalReport":
        return cls([ReportRow(**r) for r in json.loads(s)["rows"]])

    def render_table(self) -> str:
        """Speakers as rows, one (Cosine Sim, CER) column pair per task."""
        tasks = [t for t in TASKS if any(r.task == t for r in self.rows)]
        cells = {(r.speaker, r.task): r for r in self.rows}
        header = ["Speaker"] + [f"{t.capitalize()} {m}" for t in tasks for m in ("Cosine Sim (↑)", "CER (↓)")]
        lines = []
        for spk in sorted({r.speaker for r in self.rows}):
            row = [spk]
            for t in tasks:
                r = cells.get((spk, t))
                row += [f"{r.mean_cosine:.4f}", f"{r.mean_cer:.4f}"] if r else ["-", "-"]
            lines.append(row)
        overall = self.overall()
        lines.append(["Overall"] + [v for t in tasks for v in (f"{overall[t]['mean_cosine']:.4f}", f"{overall[t]['mean_cer']:.4f}")])
        widths = [max(len(str(row[i])) for row in [header] + lines) for i in range(len(header))]
        fmt = lambda row: " | ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip()  # noqa: E731
        rule = "-+-".join("-" * w for w in widths)
        return "\n".join([fmt(header), rule] + [fmt(r) for r in lines]) + "\n"


def assemble_report(synth: DatasetManifest, tasks: dict, hyps: dict,
                    synth_emb: EmbeddingSet, gt_emb: EmbeddingSet, gt_speakers: dict) -> EvalReport:
    """Combine external ASR and embedder outputs into per-(speaker, task) rows.

    ``tasks`` maps each synthesized clip id to its task.
    """
    rows = []
    for task in TASKS:
        recs = [r for r in synth.records if tasks.get(r.clip_id) == task]
        if not recs:
            continue
        sub = DatasetManifest(tuple(recs))
        cers = cer_eval(hyps, sub)
        emb = EmbeddingSet({r.clip_id: synth_emb.entries[r.clip_id] for r in recs})
        cos = speaker_similarity(emb, gt_emb, {r.clip_id: r.speaker_id for r in recs}, gt_speakers)
        counts: dict = {}
        for r in recs:
            counts[r.speaker_id] = counts.get(r.speaker_id, 0) + 1
        for spk in sorted(counts):
            rows.append(ReportRow(spk, task, cers[spk], cos[spk], counts[spk]))
    return EvalReport(rows)


# -- protocol ------------------------------------------------------------------


def prompt_seed(seed: int, clip_id: str) -> int:
    """Per-prompt seed so that synthesis order or parallelism never changes results."""
    digest = hashlib.sha256(f"{seed}:{clip_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class ProtocolResult:
    manifest: DatasetManifest
    tasks: dict
    mels: dict
    durations: dict
    report: Optional[EvalReport] = None


def check_protocol_sizes(prompts: list) -> list:
    warnings = []
    counts: dict = {}
    for p in prompts:
        counts[(p.speaker_id, p.task)] = counts.get((p.speaker_id, p.task), 0) + 1
    for (spk, task), n in sorted(counts.items()):
        expected = PROMPTS_PER_TASK.get(task)
        if expected is not None and n != expected:
            msg = f"speaker {spk!r} has {n} {task} prompts; protocol expects {expected}"
            log.warning(msg)
            warnings.append(msg)
    return warnings


def run_protocol(
    model,
    prompts: list,
    dsp_cfg: DspConfig,
    out_dir,
    seed: int = 0,
    temperature: Optional[float] = None,
    vocode: bool = True,
    gl_iters: int = 60,
    transcribe: Optional[Callable] = None,
    embed: Optional[Callable] = None,
    gt_embeddings: Optional[EmbeddingSet] = None,
    gt_speakers: Optional[dict] = None,
) -> ProtocolResult:
    """Synthesize every prompt and write mels, wavs and a manifest for the external tools.

    If ``transcribe(clip_id, mel, durations) -> str`` and ``embed(mel) -> vector``
    stand-ins are given together with ground-truth embeddings, the report is
    assembled immediately and written next to the outputs.
    """
    if isinstance(model, (str, Path)):
        model = load_model(model)
    if any(p.task not in TASKS for p in prompts):
        raise EvalError(f"prompt task must be one of {TASKS}")
    check_protocol_sizes(prompts)
    out_dir = Path(out_dir)
    (out_dir / "mels").mkdir(parents=True, exist_ok=True)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    table = text.SymbolTable(model.symbols)
    records, tasks, mels, durations = [], {}, {}, {}
    for p in sorted(prompts, key=lambda q: q.prompt_id):
        tokens = text.tokenize(p.text, table)
        cond = model.conditioning(tokens, p.accent_id, p.speaker_id)
        tau = model.cfg.temperature if temperature is None else temperature
        rng = np.random.default_rng(prompt_seed(seed, p.prompt_id))
        z = (tau * rng.standard_normal((model.cfg.n_mels, cond.n_frames))).astype(model.dtype)
        mel = model.flow_inverse(z, cond).astype(np.float64)
        mels[p.prompt_id] = mel
        durations[p.prompt_id] = cond.durations
        save_features(
            MelFeatures(mel, np.asarray(cond.f0, dtype=np.float64), extract_energy(mel), dsp_cfg.hop_s, dsp_cfg.sample_rate_hz),
            out_dir / "mels" / f"{p.prompt_id}.vani",
        )
        wav_path = out_dir / "wavs" / f"{p.prompt_id}.wav"
        n_samples = max((mel.shape[1] - 1) * dsp_cfg.hop, dsp_cfg.win)
        if vocode:
            wav = griffin_lim(mel, dsp_cfg, iters=gl_iters, seed=prompt_seed(seed, p.prompt_id) % (2**32), length=n_samples)
            write_wav(wav_path, wav)
        records.append(
            ClipRecord(
                clip_id=p.prompt_id,
                audio_path=str(wav_path),
                speaker_id=p.speaker_id,
                language=p.language,
                accent_id=p.accent_id,
                transcript_gt=p.text,
                duration_s=n_samples / dsp_cfg.sample_rate_hz,
            )
        )
        tasks[p.prompt_id] = p.task
    manifest = DatasetManifest(tuple(records), "val")
    save_manifest(manifest, out_dir / "synth.jsonl")
    atomic_write_text(out_dir / "tasks.json", json.dumps(tasks, indent=1, sort_keys=True) + "\n")
    result = ProtocolResult(manifest, tasks, mels, durations)
    if transcribe is not None and embed is not None and gt_embeddings is not None:
        hyps = {cid: transcribe(cid, mels[cid], durations[cid]) for cid in sorted(mels)}
        synth_emb = EmbeddingSet({cid: embed(mels[cid]) for cid in sorted(mels)})
        result.report = assemble_report(manifest, tasks, hyps, synth_emb, gt_embeddings, gt_speakers or {})
        atomic_write_text(out_dir / "report.json", result.report.to_json())
        atomic_write_text(out_dir / "report.txt", result.report.render_table())
    return result


def load_model(path):
    from vani.model.checkpoint import load_checkpoint

    try:
        return load_checkpoint(path)[0]
    except (OSError, ValueError, KeyError, struct.error) as exc:
        raise EvalError(f"cannot load checkpoint {path}: {exc}") from exc


GT_REFERENCES = ("raw", "vocoded")


def reference_mel(mel: np.ndarray, dsp_cfg: DspConfig, mode: str = "raw", gl_iters: int = 60) -> np.ndarray:
    """Ground-truth mel used for reference embeddings.

    ``"vocoded"`` passes the GT mel through the same Griffin-Lim vocoder as the
    synthesized clips, so vocoder artifacts cancel out of the comparison.
    """
    if mode == "raw":
        return mel
    if mode != "vocoded":
        raise EvalError(f"gt reference must be one of {GT_REFERENCES}, got {mode!r}")
    n = max((mel.shape[1] - 1) * dsp_cfg.hop, dsp_cfg.win)
    wav = griffin_lim(mel, dsp_cfg, iters=gl_iters, seed=0, length=n)
    return mel_spectrogram(wav, dsp_cfg)
