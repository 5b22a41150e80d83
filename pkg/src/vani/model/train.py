"""Maximum-likelihood training with Adam and global-norm clipping."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from vani.model.checkpoint import save_checkpoint
from vani.model.network import ConditioningSet, VaniModel, uniform_durations

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("step", "nll", "dur_loss", "f0_loss", "energy_loss")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(eq=False)
class TrainingExample:
    clip_id: str
    tokens: list
    speaker: int
    accent: int
    mel: np.ndarray
    f0: np.ndarray
    energy: np.ndarray
    durations: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.durations is None:
            self.durations = uniform_durations(self.mel.shape[1], len(self.tokens))


@dataclass
class TrainResult:
    curve: list = field(default_factory=list)
    optimizer: Optional[dict] = None


def new_optimizer(model: VaniModel) -> dict:
    return {
        "step": 0,
        "m": {k: np.zeros_like(v) for k, v in model.params.items()},
        "v": {k: np.zeros_like(v) for k, v in model.params.items()},
    }


def clip_grads(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def adam_step(model: VaniModel, grads: dict, opt: dict) -> None:
    cfg = model.cfg
    opt["step"] += 1
    t = opt["step"]
    b1, b2 = cfg.beta1, cfg.beta2
    corr = math.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for name, p in model.params.items():
        g = grads[name]
        m = opt["m"][name]
        v = opt["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (cfg.lr * corr) * m / (np.sqrt(v) + cfg.adam_eps)


def batch_indices(seed: int, step: int, n_examples: int, batch_size: int) -> np.ndarray:
    """Minibatch for ``step``; depends only on (seed, step) so resumed runs line up."""
    rng = np.random.default_rng([seed, step])
    return np.sort(rng.choice(n_examples, size=min(batch_size, n_examples), replace=False))


def batch_loss_and_grads(model: VaniModel, batch: list) -> tuple:
    totals = dict.fromkeys(("nll", "dur_loss", "f0_loss", "energy_loss", "total"), 0.0)
    acc = None
    for ex in batch:
        losses, grads = model.loss_and_grads(ex)
        for k in totals:
            totals[k] += losses[k] / len(batch)
        if acc is None:
            acc = grads
        else:
            for k in acc:
                acc[k] += grads[k]
    for g in acc.values():
        g /= len(batch)
    return totals, acc


def example_conditioning(model: VaniModel, ex: TrainingExample) -> ConditioningSet:
    """Teacher-forced conditioning (ground-truth durations, F0 and energy)."""
    a_vec, s_vec = model.embed(ex.accent, ex.speaker)
    return ConditioningSet(model.encode_text(ex.tokens), a_vec, s_vec, ex.durations, ex.f0, ex.energy)


def mean_nll(model: VaniModel, examples: list) -> float:
    return sum(model.nll(ex.mel, example_conditioning(model, ex)) for ex in examples) / len(examples)


def write_curve(path, rows: list) -> None:
    lines = [",".join(CURVE_COLUMNS)]
    for row in rows:
        lines.append(",".join([str(row["step"])] + [repr(float(row[c])) for c in CURVE_COLUMNS[1:]]))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train(
    model: VaniModel,
    examples: list,
    steps: int,
    optimizer: Optional[dict] = None,
    checkpoint_path=None,
    curve_path=None,
    log_every: int = 50,
) -> TrainResult:
    """Run ``steps`` optimizer updates (continuing from ``optimizer['step']`` if given).

    On a non-finite loss the last good parameters are checkpointed (when a
    path is set) and :class:`TrainingDiverged` is raised.
    """
    if not examples:
        raise ValueError("no training examples")
    opt = optimizer if optimizer is not None else new_optimizer(model)
    result = TrainResult(optimizer=opt)
    cfg = model.cfg
    for _ in range(steps):
        step = opt["step"]
        batch = [examples[i] for i in batch_indices(cfg.seed, step, len(examples), cfg.batch_size)]
        losses, grads = batch_loss_and_grads(model, batch)
        if not all(math.isfinite(v) for v in losses.values()):
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, model, opt)
            raise TrainingDiverged(f"non-finite loss at step {step}: {losses}")
        clip_grads(grads, cfg.grad_clip)
        adam_step(model, grads, opt)
        result.curve.append({"step": step, **losses})
        if log_every and step % log_every == 0:
            log.info("step %d total %.4f nll %.4f", step, losses["total"], losses["nll"])
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, opt)
    if curve_path is not None:
        write_curve(curve_path, result.curve)
    return result
