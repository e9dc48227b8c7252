"""WAV I/O and the linear resampling primitive behind speed perturbation.

Only RIFF/WAVE containers are handled: PCM16 and IEEE float32 input,
PCM16 little-endian mono output.  Multichannel input is downmixed to mono
by averaging channels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioBuffer:
    """Mono waveform: float samples in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        if self.samples.size == 0:
            return 0.0
        return float(np.sqrt(np.mean(np.square(self.samples))))

    def replace(self, samples: np.ndarray) -> "AudioBuffer":
        """New buffer with the same sample rate."""
        return AudioBuffer(samples=samples, sample_rate=self.sample_rate)


def read_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file into a mono AudioBuffer.

    Accepts PCM16 and IEEE float32 data, any channel count.  PCM16 samples
    are scaled by 1/32768; multichannel audio is downmixed by channel
    average.  Raises DataError on malformed headers, unsupported encodings
    or zero-length audio.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise DataError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise DataError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise DataError(f"{path}: missing fmt or data chunk")

    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if audio_format == _WAVE_FORMAT_EXTENSIBLE:
        # sub-format GUID starts with the ordinary format tag
        raise DataError(f"{path}: WAVE_FORMAT_EXTENSIBLE is not supported")
    if n_channels < 1:
        raise DataError(f"{path}: invalid channel count {n_channels}")

    if audio_format == _WAVE_FORMAT_PCM and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise DataError(
            f"{path}: unsupported encoding (format tag {audio_format}, {bits}-bit)"
        )

    if samples.size == 0:
        raise DataError(f"{path}: zero-length audio")
    if n_channels > 1:
        usable = samples.size - samples.size % n_channels
        samples = samples[:usable].reshape(-1, n_channels).mean(axis=1)

    return AudioBuffer(samples=samples, sample_rate=sample_rate)


def write_wav(path, audio: AudioBuffer) -> None:
    """Write a mono PCM16 little-endian WAV file.

    Samples are clamped to [-1, 1] and quantized round-to-nearest so that
    a write/read round trip is exact to 1 LSB (1/32768).
    """
    q = np.clip(np.rint(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    data = q.tobytes()
    sr = audio.sample_rate
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, _WAVE_FORMAT_PCM, 1, sr, sr * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(data))
    Path(path).write_bytes(header + data)


def resample_linear(audio: AudioBuffer, factor: float) -> AudioBuffer:
    """Resample by linear interpolation at positions i*factor.

    Output length is round(len/factor); positions past the last input
    sample hold the edge value.  The sample rate is left unchanged, so the
    result plays back `factor` times faster (speed change, not rate change).
    """
    if not 0.5 <= factor <= 2.0:
        raise ValueError(f"resample factor must be in [0.5, 2.0], got {factor}")
    n_in = len(audio)
    if factor == 1.0 or n_in == 0:
        return audio
    n_out = int(round(n_in / factor))
    positions = np.arange(n_out) * factor
    out = np.interp(positions, np.arange(n_in), audio.samples)
    return audio.replace(out)
