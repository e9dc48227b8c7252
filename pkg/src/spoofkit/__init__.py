"""Audio anti-spoofing pipeline toolkit.

Spectral front-ends, online data augmentation, an MFM light CNN trained
with margin or center objectives, score fusion and evaluation — all
self-contained and verifiable on synthetic corpora.
"""

__version__ = "0.1.0"

from .audio import AudioBuffer, read_wav, resample_linear, write_wav
from .dsp import (
    CqtConfig,
    Spectrogram,
    StftConfig,
    cqt_log_power,
    fft,
    low_band_slice,
    stft_log_power,
)
from .scores import ScoreSet, cllr, compute_eer, minmax_normalize, weer

__all__ = [
    "AudioBuffer",
    "CqtConfig",
    "ScoreSet",
    "Spectrogram",
    "StftConfig",
    "cllr",
    "compute_eer",
    "cqt_log_power",
    "fft",
    "low_band_slice",
    "minmax_normalize",
    "read_wav",
    "resample_linear",
    "stft_log_power",
    "weer",
    "write_wav",
]
