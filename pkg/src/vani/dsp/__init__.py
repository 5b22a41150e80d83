from vani.dsp.audio import Waveform, normalize_volume, read_wav, trim_silence, write_wav
from vani.dsp.config import DspConfig, DspError
from vani.dsp.features import MelFeatures, featurize, load_features, save_features
from vani.dsp.formant import formant_scale
from vani.dsp.pitch import extract_f0
from vani.dsp.spectral import extract_energy, griffin_lim, istft, mel_filterbank, mel_spectrogram, stft

__all__ = [
    "DspConfig",
    "DspError",
    "MelFeatures",
    "Waveform",
    "extract_energy",
    "extract_f0",
    "featurize",
    "formant_scale",
    "griffin_lim",
    "istft",
    "load_features",
    "mel_filterbank",
    "mel_spectrogram",
    "normalize_volume",
    "read_wav",
    "save_features",
    "stft",
    "trim_silence",
    "write_wav",
]
