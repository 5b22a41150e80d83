"""``vani`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from vani import pipeline as pl

log = logging.getLogger("vani")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _scales(value: str) -> list:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON (flags override it)")
    p.add_argument("--workdir", help=f"working directory (overrides ${pl.WORKDIR_ENV} and the config)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="max parallel workers for per-file stages")
    p.add_argument("-v", "--verbose", action="store_true")


def _io(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--in", dest="inp", required=True, help="input manifest")
    p.add_argument("--out", required=out_required, help="output manifest (default: <workdir>/manifests/<stage>.jsonl)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vani", description="Multilingual TTS data curation, training and evaluation.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("clean", help="drop empty audio and duplicate transcripts")
    _common(p)
    _io(p)

    p = sub.add_parser("prune", help="keep the top-k lowest-CER clips per speaker")
    _common(p)
    _io(p)
    p.add_argument("--hyps", help="ASR hypotheses JSONL {clip_id, transcript_asr}")
    p.add_argument("--top-k", type=int)

    p = sub.add_parser("pair", help="select parallel prompts across the two speakers of a language")
    _common(p)
    _io(p)
    p.add_argument("--hyps")
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--pairs-in", help="reuse an existing pair file instead of recomputing")
    p.add_argument("--pairs-out")

    p = sub.add_parser("budget", help="cap audio hours per speaker")
    _common(p)
    _io(p)
    p.add_argument("--hours", type=float)

    p = sub.add_parser("split", help="seeded per-speaker train/val split")
    _common(p)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--train-out")
    p.add_argument("--val-out")
    p.add_argument("--val-fraction", type=float)

    for name, helptext in (("trim", "trim silences and re-pad"), ("normalize", "peak-normalize volume"),
                           ("featurize", "extract mel, F0 and energy")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        _io(p)

    p = sub.add_parser("augment", help="formant-scaling augmentation (new speakers)")
    _common(p)
    _io(p)
    p.add_argument("--scales", type=_scales, default=list(pl.batch.DEFAULT_SCALES))

    p = sub.add_parser("train", help="train the synthesizer")
    _common(p)
    p.add_argument("--in", dest="inp", required=True, help="featurized training manifest")
    p.add_argument("--steps", type=int, help="total optimizer steps")
    p.add_argument("--checkpoint")
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("synth", help="synthesize one sentence")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--speaker", required=True)
    p.add_argument("--accent", required=True)
    p.add_argument("--out", required=True, help="output prefix (.vani and .wav are written)")
    p.add_argument("--temperature", type=float)
    p.add_argument("--no-vocode", action="store_true")

    p = sub.add_parser("eval", help="run the resynthesis/transfer protocol")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--gt", required=True, help="ground-truth (training) manifest")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--prompts", help="prompt JSONL")
    src.add_argument("--prompt-texts", help="JSON {language: [texts]} to build the default prompt set")
    p.add_argument("--out-dir")
    p.add_argument("--standin", action="store_true", help="score with the built-in toy ASR and embedder")
    p.add_argument("--gt-reference", choices=pl.ev.GT_REFERENCES)
    p.add_argument("--no-vocode", action="store_true")

    p = sub.add_parser("report", help="assemble a report from external ASR/embedder outputs")
    _common(p)
    p.add_argument("--synth-dir", required=True)
    p.add_argument("--hyps", required=True)
    p.add_argument("--synth-emb", required=True)
    p.add_argument("--gt-emb", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out-dir")

    p = sub.add_parser("pipeline", help="run a named recipe end to end")
    _common(p)
    p.add_argument("--preset", required=True, choices=sorted(pl.PRESETS))
    p.add_argument("--corpus", required=True, help="raw manifest")
    p.add_argument("--hyps")
    p.add_argument("--prompt-texts")
    p.add_argument("--pairs-in")
    p.add_argument("--standin", action="store_true")

    p = sub.add_parser("toy", help="write the seeded synthetic corpus and a matching config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> pl.PipelineConfig:
    pc = pl.resolve_config(args.config, args.workdir, args.seed)
    sel = {}
    if getattr(args, "top_k", None) is not None:
        sel["top_k_per_speaker"] = args.top_k
    if getattr(args, "n_pairs", None) is not None:
        sel["parallel_pairs_per_language"] = args.n_pairs
    if getattr(args, "hours", None) is not None:
        sel["budget_hours_per_speaker"] = args.hours
    if getattr(args, "val_fraction", None) is not None:
        sel["val_fraction"] = args.val_fraction
    if sel:
        pc = replace(pc, selection=replace(pc.selection, **sel))
    if getattr(args, "steps", None) is not None:
        pc = replace(pc, train=replace(pc.train, steps=args.steps))
    if getattr(args, "gt_reference", None):
        pc = replace(pc, eval=replace(pc.eval, gt_reference=args.gt_reference))
    return pc


def _toy(args) -> None:
    from vani.toy import TOY_DSP, TOY_MODEL, write_toy_corpus

    corpus = write_toy_corpus(args.out, seed=args.seed)
    sel = {"top_k_per_speaker": 14, "parallel_pairs_per_language": 12, "budget_hours_per_speaker": 0.003}
    doc = {"dsp": TOY_DSP.to_dict(), "model": json.loads(TOY_MODEL.to_json()), "selection": sel,
           "seed": args.seed}
    (Path(args.out) / "pipeline.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(corpus.manifest)} records to {corpus.manifest_path}")


def run(args) -> None:
    if args.command == "toy":
        _toy(args)
        return
    pc = _config(args)
    cmd = args.command
    if cmd == "clean":
        pl.stage_clean(pc, args.inp, args.out)
    elif cmd == "prune":
        pl.stage_prune(pc, args.inp, args.out, args.hyps)
    elif cmd == "pair":
        pl.stage_pair(pc, args.inp, args.out, args.hyps, args.pairs_in, args.pairs_out)
    elif cmd == "budget":
        pl.stage_budget(pc, args.inp, args.out)
    elif cmd == "split":
        pl.stage_split(pc, args.inp, args.train_out, args.val_out)
    elif cmd == "trim":
        pl.stage_trim(pc, args.inp, args.out, args.threads)
    elif cmd == "normalize":
        pl.stage_normalize(pc, args.inp, args.out, args.threads)
    elif cmd == "augment":
        pl.stage_augment(pc, args.inp, args.out, args.scales, args.threads)
    elif cmd == "featurize":
        pl.stage_featurize(pc, args.inp, args.out, args.threads)
    elif cmd == "train":
        pl.stage_train(pc, args.inp, args.checkpoint, args.resume)
    elif cmd == "synth":
        pl.stage_synth(pc, args.checkpoint, args.text, args.speaker, args.accent, args.out,
                       temperature=args.temperature, vocode=not args.no_vocode)
    elif cmd == "eval":
        pl.stage_eval(pc, args.checkpoint or pl.checkpoint_path(pc), args.gt, args.prompts, args.prompt_texts,
                      args.standin, args.out_dir, vocode=not args.no_vocode)
    elif cmd == "report":
        report = pl.stage_report(pc, args.synth_dir, args.hyps, args.synth_emb, args.gt_emb, args.gt, args.out_dir)
        sys.stdout.write(report.render_table())
    elif cmd == "pipeline":
        pl.run_preset(pc, args.preset, args.corpus, args.hyps, args.prompt_texts, args.standin,
                      args.threads, args.pairs_in)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"vani: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (ValueError, OSError, KeyError) as exc:
        # module errors are ValueError subclasses; surface their message verbatim
        print(f"vani: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
