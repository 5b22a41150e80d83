"""Flow-based mel synthesizer, its training loop and checkpoint format."""
from vani.model.checkpoint import load_checkpoint, save_checkpoint
from vani.model.config import PARAM_BUDGET, ModelConfig, ModelError
from vani.model.network import ConditioningSet, VaniModel, count_params, regulate_durations, uniform_durations
from vani.model.train import TrainingDiverged, TrainingExample, mean_nll, train

__all__ = [
    "PARAM_BUDGET",
    "ConditioningSet",
    "ModelConfig",
    "ModelError",
    "TrainingDiverged",
    "TrainingExample",
    "VaniModel",
    "count_params",
    "load_checkpoint",
    "mean_nll",
    "regulate_durations",
    "save_checkpoint",
    "train",
    "uniform_durations",
]
