from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

PARAM_BUDGET = 5_000_000


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_mels: int = 80
    d_txt: int = 192
    d_accent: int = 8
    d_speaker: int = 16
    n_flow_steps: int = 2
    n_lstm_layers: int = 3
    lstm_hidden: int = 256
    predictor_hidden: int = 128
    enc_layers: int = 3
    enc_kernel: int = 5
    n_symbols: int = 256
    n_speakers: int = 18
    n_accents: int = 3
    temperature: float = 0.7
    logsig_clamp: float = 7.0
    # LSTM-input normalization of mel/energy values; does not enter the density
    mel_offset: float = -5.0
    mel_scale: float = 2.0
    f0_ref_hz: float = 800.0
    f0_min_hz: float = 65.0
    dtype: str = "float32"
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    batch_size: int = 4

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ModelError(f"dtype must be float32 or float64, got {self.dtype!r}")
        for name in ("n_mels", "d_txt", "d_accent", "d_speaker", "n_flow_steps", "n_lstm_layers",
                     "lstm_hidden", "predictor_hidden", "n_symbols", "n_speakers", "n_accents", "batch_size"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1")
        if self.enc_kernel % 2 != 1:
            raise ModelError("enc_kernel must be odd")
        if self.temperature < 0:
            raise ModelError("temperature must be >= 0")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def d_cond(self) -> int:
        """Width of the per-frame conditioning vector: context, A, S, F0, energy."""
        return self.d_txt + self.d_accent + self.d_speaker + 2

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)
