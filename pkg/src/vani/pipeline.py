"""Stage runners behind the command line.

Every stage reads a manifest, writes a new manifest (plus audio, features or
a checkpoint) and a stage log ``{stage, input_count, output_count,
config_hash, seed}``. Outputs depend only on inputs, config and seed.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from vani import curation, eval as ev, text
from vani.curation import SelectionConfig
from vani.dsp import DspConfig, batch, load_features
from vani.manifest import DatasetManifest, atomic_write_text, load_manifest, save_manifest
from vani.model.checkpoint import load_checkpoint
from vani.model.config import ModelConfig
from vani.model.data import build_examples, inventories
from vani.model.network import VaniModel
from vani.model.train import new_optimizer, train, write_curve

log = logging.getLogger(__name__)

WORKDIR_ENV = "VANI_WORKDIR"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    log_every: int = 50


@dataclass(frozen=True)
class EvalConfig:
    gl_iters: int = 60
    gt_reference: str = "raw"
    temperature: Optional[float] = None
    n_resynthesis: int = ev.PROMPTS_PER_TASK["resynthesis"]
    n_transfer: int = ev.PROMPTS_PER_TASK["transfer"]


@dataclass(frozen=True)
class Paths:
    workdir: str = "work"
    manifests: str = "manifests"
    audio: str = "audio"
    features: str = "features"
    checkpoints: str = "checkpoints"
    reports: str = "reports"
    logs: str = "logs"


_SECTIONS = {
    "dsp": DspConfig,
    "selection": SelectionConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "paths": Paths,
}


@dataclass(frozen=True)
class PipelineConfig:
    dsp: DspConfig = field(default_factory=DspConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: Paths = field(default_factory=Paths)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict, base: Optional["PipelineConfig"] = None) -> "PipelineConfig":
        """Overlay a (possibly partial) dict on ``base`` (defaults if omitted)."""
        base = base or cls()
        unknown = set(data) - set(_SECTIONS) - {"seed"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        changes = {}
        for name, kind in _SECTIONS.items():
            if name in data:
                known = {f.name for f in fields(kind)}
                bad = set(data[name]) - known
                if bad:
                    raise ValueError(f"unknown {name} fields: {sorted(bad)}")
                changes[name] = replace(getattr(base, name), **data[name])
        if "seed" in data:
            changes["seed"] = int(data["seed"])
        return replace(base, **changes)

    @classmethod
    def load(cls, path, base: Optional["PipelineConfig"] = None) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), base)

    def with_workdir(self, workdir) -> "PipelineConfig":
        return replace(self, paths=replace(self.paths, workdir=str(workdir)))

    def path(self, kind: str) -> Path:
        p = Path(getattr(self.paths, kind))
        return p if p.is_absolute() else Path(self.paths.workdir) / p


def resolve_config(path=None, workdir=None, seed=None) -> PipelineConfig:
    """Precedence: flags > environment (workdir only) > config file > defaults."""
    pc = PipelineConfig.load(path) if path else PipelineConfig()
    if os.environ.get(WORKDIR_ENV):
        pc = pc.with_workdir(os.environ[WORKDIR_ENV])
    if workdir is not None:
        pc = pc.with_workdir(workdir)
    if seed is not None:
        pc = replace(pc, seed=int(seed))
    return pc


# -- stage bookkeeping ---------------------------------------------------------------

_DSP_KEYS = {
    "trim": ("sample_rate_hz", "win", "hop", "trim_threshold_db", "pad_s"),
    "normalize": ("peak_level",),
    "augment": ("sample_rate_hz", "n_fft", "hop", "win", "cepstral_order"),
    "featurize": ("sample_rate_hz", "n_fft", "hop", "win", "n_mels", "fmin_hz", "fmax_hz",
                  "f0_min_hz", "f0_max_hz", "yin_threshold", "log_floor"),
}
_SELECTION_KEYS = {
    "prune": ("top_k_per_speaker",),
    "pair": ("parallel_pairs_per_language", "max_length_ratio"),
    "budget": ("budget_hours_per_speaker",),
    "split": ("val_fraction",),
}


def relevant_config(pc: PipelineConfig, stage: str, extra: Optional[dict] = None) -> dict:
    """The config fields a stage's output depends on (what ``config_hash`` covers)."""
    rel: dict = {}
    if stage in _DSP_KEYS:
        rel["dsp"] = {k: getattr(pc.dsp, k) for k in _DSP_KEYS[stage]}
    if stage in _SELECTION_KEYS:
        rel["selection"] = {k: getattr(pc.selection, k) for k in _SELECTION_KEYS[stage]}
    if stage == "train":
        rel["model"] = asdict(pc.model)
        rel["train"] = {"steps": pc.train.steps}
    if stage == "eval":
        rel["dsp"] = asdict(pc.dsp)
        rel["eval"] = asdict(pc.eval)
    if extra:
        rel["args"] = extra
    return rel


def config_hash(pc: PipelineConfig, stage: str, extra: Optional[dict] = None) -> str:
    blob = json.dumps(relevant_config(pc, stage, extra), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def write_stage_log(pc: PipelineConfig, stage: str, n_in: int, n_out: int, extra: Optional[dict] = None) -> dict:
    entry = {
        "stage": stage,
        "input_count": n_in,
        "output_count": n_out,
        "config_hash": config_hash(pc, stage, extra),
        "seed": pc.seed,
    }
    path = pc.path("logs") / f"{stage}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, json.dumps(entry, sort_keys=True) + "\n")
    log.info("%s: %d -> %d records", stage, n_in, n_out)
    return entry


def _out(pc: PipelineConfig, out, stage: str) -> Path:
    return Path(out) if out else pc.path("manifests") / f"{stage}.jsonl"


def _finish(pc, stage, m_in, m_out, out, extra=None) -> DatasetManifest:
    save_manifest(m_out, _out(pc, out, stage))
    write_stage_log(pc, stage, len(m_in), len(m_out), extra)
    return m_out


# -- selection stages ------------------------------------------------------------------


def stage_clean(pc, inp, out=None) -> DatasetManifest:
    m = load_manifest(inp)
    return _finish(pc, "clean", m, curation.clean(m), out)


def _with_hypotheses(m: DatasetManifest, hyps_path) -> DatasetManifest:
    return curation.attach_hypotheses(m, curation.load_hypotheses(hyps_path)) if hyps_path else m


def stage_prune(pc, inp, out=None, hyps=None) -> DatasetManifest:
    m = load_manifest(inp)
    return _finish(pc, "prune", m, curation.prune_top_k(_with_hypotheses(m, hyps), pc.selection), out)


def stage_pair(pc, inp, out=None, hyps=None, pairs_in=None, pairs_out=None) -> DatasetManifest:
    """Parallel selection per language.

    Languages without exactly two speakers are passed through unchanged.
    With ``pairs_in`` an existing pair file is reused instead of recomputing.
    """
    m = _with_hypotheses(load_manifest(inp), hyps)
    if all(r.transcript_asr is not None for r in m.records) and m.records:
        m = curation.score_cer(m)
    if pairs_in:
        pairs = curation.load_pairs(pairs_in)
    else:
        pairs = {}
        for lang in sorted({r.language for r in m.records}):
            n_spk = len({r.speaker_id for r in m.records if r.language == lang})
            if n_spk != 2:
                log.warning("pair: language %s has %d speakers; kept without pairing", lang, n_spk)
                continue
            pairs[lang] = curation.select_parallel(m, pc.selection, lang)
    paired_langs = set(pairs)
    chosen = curation.parallel_subset(m, [p for ps in pairs.values() for p in ps])
    kept = list(chosen.records) + [r for r in m.records if r.language not in paired_langs]
    result = DatasetManifest(tuple(kept), "parallel")
    curation.save_pairs(pairs, pairs_out or pc.path("manifests") / "pairs.json")
    return _finish(pc, "pair", m, result, out, {"reused_pairs": bool(pairs_in)})


def stage_budget(pc, inp, out=None) -> DatasetManifest:
    m = load_manifest(inp)
    return _finish(pc, "budget", m, curation.apply_budget(m, pc.selection), out)


def stage_split(pc, inp, train_out=None, val_out=None) -> tuple:
    m = load_manifest(inp)
    tr, va = curation.split_train_val(m, pc.selection, pc.seed)
    save_manifest(tr, Path(train_out) if train_out else pc.path("manifests") / "train.jsonl")
    save_manifest(va, Path(val_out) if val_out else pc.path("manifests") / "val.jsonl")
    write_stage_log(pc, "split", len(m), len(tr) + len(va))
    return tr, va


# -- dsp stages -----------------------------------------------------------------------


def stage_trim(pc, inp, out=None, threads=1) -> DatasetManifest:
    m = load_manifest(inp)
    return _finish(pc, "trim", m, batch.trim_manifest(m, pc.dsp, pc.path("audio") / "trim", threads), out)


def stage_normalize(pc, inp, out=None, threads=1) -> DatasetManifest:
    m = load_manifest(inp)
    return _finish(pc, "normalize", m, batch.normalize_manifest(m, pc.dsp, pc.path("audio") / "normalize", threads), out)


def stage_augment(pc, inp, out=None, scales=batch.DEFAULT_SCALES, threads=1) -> DatasetManifest:
    m = load_manifest(inp)
    scales = [float(s) for s in scales]
    res = batch.augment_manifest(m, pc.dsp, pc.path("audio") / "augment", scales, threads)
    return _finish(pc, "augment", m, res, out, {"scales": scales})


def stage_featurize(pc, inp, out=None, threads=1) -> DatasetManifest:
    m = load_manifest(inp)
    return _finish(pc, "featurize", m, batch.featurize_manifest(m, pc.dsp, pc.path("features"), threads), out)


# -- model stages ----------------------------------------------------------------------


def checkpoint_path(pc) -> Path:
    return pc.path("checkpoints") / "model.ckpt"


def _read_curve(path, before_step: int) -> list:
    if not Path(path).exists():
        return []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
    return [r for r in rows if r["step"] < before_step]


def stage_train(pc, inp, checkpoint=None, resume=False) -> VaniModel:
    """Train until the optimizer has taken ``train.steps`` steps in total."""
    m = load_manifest(inp)
    if len(m) == 0:
        raise ValueError(f"train: {inp} has no records")
    ckpt = Path(checkpoint) if checkpoint else checkpoint_path(pc)
    curve_path = pc.path("reports") / "loss_curve.csv"
    table = text.build_symbol_table(m)
    speakers, accents = inventories(m)
    if resume and ckpt.exists():
        model, opt = load_checkpoint(ckpt)
        if opt is None:
            opt = new_optimizer(model)
        if list(model.symbols) != list(table.symbols) or list(model.speakers) != speakers:
            raise ValueError(f"checkpoint {ckpt} was trained on a different symbol or speaker inventory")
        table = text.SymbolTable(model.symbols)
    else:
        cfg = replace(pc.model, n_symbols=len(table.symbols), n_speakers=len(speakers),
                      n_accents=len(accents), seed=pc.seed)
        model = VaniModel(cfg, None, table.symbols, speakers, accents)
        opt = new_optimizer(model)
    start = opt["step"]
    previous = _read_curve(curve_path, start) if resume else []
    examples = build_examples(m, pc.path("features"), table, list(model.speakers), list(model.accents))
    result = train(model, examples, max(0, pc.train.steps - start), opt, checkpoint_path=ckpt,
                   log_every=pc.train.log_every)
    write_curve(curve_path, previous + result.curve)
    write_stage_log(pc, "train", len(m), int(opt["step"]))
    return model


def stage_synth(pc, checkpoint, sentence: str, speaker: str, accent: str, out_prefix, seed=None,
                temperature=None, vocode=True) -> np.ndarray:
    from vani.dsp import MelFeatures, extract_energy, griffin_lim, save_features, write_wav

    model, _ = load_checkpoint(checkpoint)
    tokens = text.tokenize(sentence, text.SymbolTable(model.symbols))
    mel = model.synthesize(tokens, accent, speaker, temperature, pc.seed if seed is None else seed).astype(np.float64)
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    f0 = np.zeros(mel.shape[1])
    save_features(MelFeatures(mel, f0, extract_energy(mel), pc.dsp.hop_s, pc.dsp.sample_rate_hz),
                  out_prefix.with_suffix(".vani"))
    if vocode:
        write_wav(out_prefix.with_suffix(".wav"), griffin_lim(mel, pc.dsp, iters=pc.eval.gl_iters, seed=0))
    return mel


# -- evaluation --------------------------------------------------------------------------


def native_accents(m: DatasetManifest) -> dict:
    """Language -> most common accent among the original (non-augmented) records."""
    counts: dict = {}
    for r in m.records:
        if r.augmented_from is None:
            c = counts.setdefault(r.language, {})
            c[r.accent_id] = c.get(r.accent_id, 0) + 1
    return {lang: sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))[0][0] for lang, c in sorted(counts.items())}


def speaker_languages(m: DatasetManifest) -> dict:
    return {r.speaker_id: r.language for r in m.records if r.augmented_from is None}


def prompts_from_texts(pc, gt: DatasetManifest, texts_path) -> list:
    texts = json.loads(Path(texts_path).read_text(encoding="utf-8"))
    return ev.make_prompts(texts, speaker_languages(gt), native_accents(gt),
                           pc.eval.n_resynthesis, pc.eval.n_transfer)


def standin_tools(pc, gt: DatasetManifest) -> tuple:
    """Template recognizer and GT embeddings from the training features."""
    from vani.model.network import uniform_durations
    from vani.toy import TemplateRecognizer, mel_embedding

    table = text.build_symbol_table(gt)
    fit_rows, gt_emb, gt_speakers = [], {}, {}
    for r in gt.records:
        if r.augmented_from is not None:
            continue
        mel = load_features(pc.path("features") / f"{r.clip_id}.vani").mel.astype(np.float64)
        n_tok = len(text.tokenize(r.transcript_gt, table))
        fit_rows.append((r.transcript_gt, mel, uniform_durations(mel.shape[1], n_tok)))
        ref = ev.reference_mel(mel, pc.dsp, pc.eval.gt_reference, pc.eval.gl_iters)
        gt_emb[r.clip_id] = mel_embedding(ref)
        gt_speakers[r.clip_id] = r.speaker_id
    return TemplateRecognizer.fit(fit_rows), ev.EmbeddingSet(gt_emb), gt_speakers


def stage_eval(pc, checkpoint, gt_manifest, prompts=None, prompt_texts=None, standin=False,
               out_dir=None, vocode=True) -> ev.ProtocolResult:
    """Synthesize the prompt set; with ``standin`` also score it with the toy ASR/embedder."""
    gt = load_manifest(gt_manifest)
    if prompts:
        prompt_list = ev.load_prompts(prompts)
    elif prompt_texts:
        prompt_list = prompts_from_texts(pc, gt, prompt_texts)
    else:
        raise ValueError("eval needs --prompts or --prompt-texts")
    out_dir = Path(out_dir) if out_dir else pc.path("reports") / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    ev.save_prompts(prompt_list, out_dir / "prompts.jsonl")
    model = ev.load_model(checkpoint)
    res = ev.run_protocol(model, prompt_list, pc.dsp, out_dir, seed=pc.seed, temperature=pc.eval.temperature,
                          vocode=vocode, gl_iters=pc.eval.gl_iters)
    if standin:
        from vani.toy import mel_embedding

        recognizer, gt_emb, gt_speakers = standin_tools(pc, gt)
        hyps = {cid: recognizer.transcribe(res.mels[cid], res.durations[cid]) for cid in sorted(res.mels)}
        synth_emb = ev.EmbeddingSet({cid: mel_embedding(res.mels[cid]) for cid in sorted(res.mels)})
        atomic_write_text(out_dir / "hyps.jsonl", "".join(
            json.dumps({"clip_id": cid, "transcript_asr": h}, ensure_ascii=False) + "\n" for cid, h in hyps.items()))
        synth_emb.save(out_dir / "synth_emb.jsonl")
        gt_emb.save(out_dir / "gt_emb.jsonl")
        res.report = ev.assemble_report(res.manifest, res.tasks, hyps, synth_emb, gt_emb, gt_speakers)
        write_report(res.report, out_dir)
    write_stage_log(pc, "eval", len(prompt_list), len(res.manifest), {"standin": standin, "vocode": vocode})
    return res


def write_report(report: ev.EvalReport, out_dir) -> None:
    atomic_write_text(Path(out_dir) / "report.json", report.to_json())
    atomic_write_text(Path(out_dir) / "report.txt", report.render_table())


def stage_report(pc, synth_dir, hyps, synth_emb, gt_emb, gt_manifest, out_dir=None) -> ev.EvalReport:
    """Assemble a report from external ASR and embedder outputs."""
    synth_dir = Path(synth_dir)
    synth = load_manifest(synth_dir / "synth.jsonl")
    tasks = json.loads((synth_dir / "tasks.json").read_text(encoding="utf-8"))
    gt = load_manifest(gt_manifest)
    report = ev.assemble_report(
        synth,
        tasks,
        curation.load_hypotheses(hyps),
        ev.EmbeddingSet.load(synth_emb),
        ev.EmbeddingSet.load(gt_emb),
        {r.clip_id: r.speaker_id for r in gt.records},
    )
    write_report(report, out_dir or synth_dir)
    write_stage_log(pc, "report", len(synth), len(report.rows))
    return report


# -- presets ---------------------------------------------------------------------------

PRESETS = {
    "track2": ("clean", "prune", "trim", "normalize", "featurize", "train"),
    "track13": ("clean", "pair", "budget", "trim", "normalize", "augment", "featurize", "train"),
}


def run_preset(pc, preset: str, corpus, hyps=None, prompt_texts=None, standin=False, threads=1,
               pairs_in=None) -> dict:
    """Run a named recipe; returns the path of every manifest it wrote."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    current = Path(corpus)
    written = {}
    for stage in PRESETS[preset]:
        out = pc.path("manifests") / f"{stage}.jsonl"
        if stage == "clean":
            stage_clean(pc, current, out)
        elif stage == "prune":
            stage_prune(pc, current, out, hyps)
        elif stage == "pair":
            stage_pair(pc, current, out, hyps, pairs_in)
        elif stage == "budget":
            stage_budget(pc, current, out)
        elif stage == "trim":
            stage_trim(pc, current, out, threads)
        elif stage == "normalize":
            stage_normalize(pc, current, out, threads)
        elif stage == "augment":
            stage_augment(pc, current, out, threads=threads)
        elif stage == "featurize":
            stage_featurize(pc, current, out, threads)
        elif stage == "train":
            stage_train(pc, current)
            continue
        written[stage] = out
        current = out
    if prompt_texts:
        stage_eval(pc, checkpoint_path(pc), current, prompt_texts=prompt_texts, standin=standin)
    return written
