from __future__ import annotations

from dataclasses import asdict, dataclass


class DspError(ValueError):
    pass


@dataclass(frozen=True)
class DspConfig:
    sample_rate_hz: int = 22050
    n_fft: int = 1024
    hop: int = 256
    win: int = 1024
    n_mels: int = 80
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    trim_threshold_db: float = 50.0
    pad_s: float = 0.2
    f0_min_hz: float = 65.0
    f0_max_hz: float = 800.0
    yin_threshold: float = 0.15
    cepstral_order: int = 30
    peak_level: float = 0.95
    log_floor: float = 1e-5

    def __post_init__(self):
        if not (0 < self.hop <= self.win <= self.n_fft):
            raise DspError(f"need 0 < hop <= win <= n_fft, got {self.hop}, {self.win}, {self.n_fft}")
        if self.fmax_hz > self.sample_rate_hz / 2:
            raise DspError(f"fmax_hz {self.fmax_hz} exceeds Nyquist {self.sample_rate_hz / 2}")
        if not (0 <= self.fmin_hz < self.fmax_hz):
            raise DspError("need 0 <= fmin_hz < fmax_hz")
        if not (0 < self.f0_min_hz < self.f0_max_hz):
            raise DspError("need 0 < f0_min_hz < f0_max_hz")
        if self.n_mels < 1 or self.cepstral_order < 1:
            raise DspError("n_mels and cepstral_order must be positive")

    @property
    def hop_s(self) -> float:
        return self.hop / self.sample_rate_hz

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DspConfig":
        return cls(**data)
