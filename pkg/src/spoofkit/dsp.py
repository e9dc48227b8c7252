"""Log power spectrogram front-ends: STFT, constant-Q transform, band slicing.

All features are natural-log power values floored at LOG_POWER_FLOOR before
the log, so silence maps to ln(1e-10) instead of -inf.  Framing places
windows fully inside the signal (no centering); inputs shorter than one
window are zero-padded to a single frame.

The FFT is an iterative radix-2 kernel restricted to power-of-two lengths.
It also backs the fast convolution used for reverberation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer
from .errors import DataError

LOG_POWER_FLOOR = 1e-10

_SPG_MAGIC = b"SPG1"


@dataclass(frozen=True)
class StftConfig:
    window_length: int
    n_fft: int
    hop_length: int
    low_band_max_hz: float = 4000.0

    def __post_init__(self):
        if self.window_length > self.n_fft:
            raise ValueError("window_length must not exceed n_fft")
        if self.hop_length <= 0:
            raise ValueError("hop_length must be positive")


@dataclass(frozen=True)
class CqtConfig:
    bins_per_octave: int = 49
    f_min: float = 15.6
    f_max: float = 4000.0
    hop_length: int = 160

    def __post_init__(self):
        if self.bins_per_octave <= 0:
            raise ValueError("bins_per_octave must be positive")
        if not self.f_min < self.f_max:
            raise ValueError("f_min must be below f_max")
        if self.hop_length <= 0:
            raise ValueError("hop_length must be positive")

    def bin_frequencies(self) -> np.ndarray:
        """Geometric bin centers f_min * 2^(k/B), up to f_max inclusive."""
        n_bins = int(np.floor(self.bins_per_octave * np.log2(self.f_max / self.f_min))) + 1
        k = np.arange(n_bins)
        return self.f_min * np.power(2.0, k / self.bins_per_octave)


STFT_1024 = StftConfig(window_length=1024, n_fft=1024, hop_length=160)
STFT_2048 = StftConfig(window_length=2048, n_fft=2048, hop_length=160)
CQT_DEFAULT = CqtConfig()


@dataclass(frozen=True)
class Spectrogram:
    """Log power values [n_bins x n_frames] with per-row center frequencies."""

    values: np.ndarray
    bin_frequencies: np.ndarray
    frame_hop: int

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values))
        object.__setattr__(
            self, "bin_frequencies", np.asarray(self.bin_frequencies, dtype=np.float64)
        )
        if self.values.ndim != 2 or 0 in self.values.shape:
            raise ValueError(f"values must be a non-empty 2-D matrix, got {self.values.shape}")
        if self.bin_frequencies.shape != (self.values.shape[0],):
            raise ValueError("bin_frequencies length must match the number of rows")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# FFT
# ---------------------------------------------------------------------------

_bitrev_cache: dict[int, np.ndarray] = {}


def _bit_reverse_indices(n: int) -> np.ndarray:
    idx = _bitrev_cache.get(n)
    if idx is None:
        bits = n.bit_length() - 1
        idx = np.zeros(n, dtype=np.intp)
        for b in range(bits):
            idx |= ((np.arange(n) >> b) & 1) << (bits - 1 - b)
        _bitrev_cache[n] = idx
    return idx


def _fft_batch(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Radix-2 decimation-in-time FFT over the last axis of a 2-D batch."""
    n = x.shape[-1]
    if n == 0 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    a = np.asarray(x, dtype=np.complex128)[:, _bit_reverse_indices(n)].copy()
    sign = 1.0 if inverse else -1.0
    half = 1
    while half < n:
        w = np.exp(sign * 2j * np.pi * np.arange(half) / (2 * half))
        a = a.reshape(a.shape[0], -1, 2, half)
        even = a[:, :, 0, :]
        odd = a[:, :, 1, :] * w
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(a.shape[0], -1)
        half *= 2
    if inverse:
        a /= n
    return a


def fft(x, inverse: bool = False) -> np.ndarray:
    """Radix-2 FFT of a single vector; inverse includes 1/N scaling.

    Forward convention: X[k] = sum_n x[n] exp(-2*pi*i*k*n/N).  Length must
    be a power of two.
    """
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError("fft expects a 1-D vector")
    return _fft_batch(x[None, :], inverse=inverse)[0]


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window 0.5*(1 - cos(2*pi*k/n))."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def fast_convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Full linear convolution of two real vectors via the radix-2 FFT."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.size == 0 or h.size == 0:
        raise ValueError("fast_convolve requires non-empty inputs")
    n_out = x.size + h.size - 1
    n = 1 << (n_out - 1).bit_length()
    xf = _fft_batch(np.pad(x, (0, n - x.size))[None, :])[0]
    hf = _fft_batch(np.pad(h, (0, n - h.size))[None, :])[0]
    y = _fft_batch((xf * hf)[None, :], inverse=True)[0]
    return y.real[:n_out]


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------

def frame_signal(samples: np.ndarray, window_length: int, hop_length: int) -> np.ndarray:
    """Frames fully inside the signal; short input is zero-padded to one frame."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < window_length:
        x = np.pad(x, (0, window_length - x.size))
    n_frames = (x.size - window_length) // hop_length + 1
    starts = np.arange(n_frames) * hop_length
    return x[starts[:, None] + np.arange(window_length)]


def stft_log_power(audio: AudioBuffer, cfg: StftConfig) -> Spectrogram:
    """Hann-windowed log power STFT with n_fft/2+1 bins.

    Values are ln(max(|X|^2, LOG_POWER_FLOOR)).
    """
    if len(audio) == 0:
        raise ValueError("audio is empty")
    frames = frame_signal(audio.samples, cfg.window_length, cfg.hop_length)
    frames = frames * hann_window(cfg.window_length)
    if cfg.n_fft > cfg.window_length:
        frames = np.pad(frames, ((0, 0), (0, cfg.n_fft - cfg.window_length)))
    spectrum = _fft_batch(frames)[:, : cfg.n_fft // 2 + 1]
    power = spectrum.real**2 + spectrum.imag**2
    values = np.log(np.maximum(power, LOG_POWER_FLOOR)).T
    freqs = np.arange(cfg.n_fft // 2 + 1) * (audio.sample_rate / cfg.n_fft)
    return Spectrogram(values=values, bin_frequencies=freqs, frame_hop=cfg.hop_length)


def low_band_slice(spec: Spectrogram, max_hz: float) -> Spectrogram:
    """Keep rows with center frequency <= max_hz (inclusive)."""
    if max_hz < spec.bin_frequencies[0]:
        raise ValueError(
            f"max_hz {max_hz} is below the first bin at {spec.bin_frequencies[0]} Hz"
        )
    keep = int(np.searchsorted(spec.bin_frequencies, max_hz, side="right"))
    return Spectrogram(
        values=spec.values[:keep],
        bin_frequencies=spec.bin_frequencies[:keep],
        frame_hop=spec.frame_hop,
    )


# ---------------------------------------------------------------------------
# CQT
# ---------------------------------------------------------------------------

def cqt_log_power(audio: AudioBuffer, cfg: CqtConfig) -> Spectrogram:
    """Constant-Q log power spectrogram by direct windowed inner products.

    Bin k sits at f_min * 2^(k/B); its analysis window length is Q*sr/f_k
    with Q = 1/(2^(1/B) - 1), so the frequency-to-bandwidth ratio is
    constant across bins.  Windows are centered on frames t*hop and
    truncated at the signal edges.  Each bin is normalized by its window
    sum so a unit sine peaks at the same level in every bin.
    """
    if len(audio) == 0:
        raise ValueError("audio is empty")
    sr = audio.sample_rate
    nyquist = sr / 2.0
    if cfg.f_max > nyquist:
        raise ValueError(f"f_max {cfg.f_max} exceeds Nyquist {nyquist}")

    freqs = cfg.bin_frequencies()
    q_factor = 1.0 / (2.0 ** (1.0 / cfg.bins_per_octave) - 1.0)
    x = audio.samples
    n = x.size
    centers = np.arange(0, n, cfg.hop_length)
    n_frames = centers.size
    win_lens = np.maximum(np.round(q_factor * sr / freqs).astype(int), 2)

    # zero-pad so edge frames see truncated windows (clipped to the signal)
    pad = int(win_lens.max()) // 2 + 1
    xpad = np.concatenate([np.zeros(pad), x, np.zeros(pad)])

    power = np.empty((freqs.size, n_frames))
    # bins grouped per octave share one frame matrix: kernels are padded
    # (centered) to the group's longest window and applied as one matmul
    for group_start in range(0, freqs.size, cfg.bins_per_octave):
        group = np.arange(group_start, min(group_start + cfg.bins_per_octave, freqs.size))
        group_len = int(win_lens[group].max())
        kernels = np.zeros((group_len, 2 * group.size))
        norms = np.empty(group.size)
        for col, k in enumerate(group):
            win_len = int(win_lens[k])
            offsets = np.arange(win_len) - win_len // 2
            window = hann_window(win_len)
            phase = -2.0 * np.pi * freqs[k] / sr * offsets
            lo = group_len // 2 - win_len // 2
            kernels[lo : lo + win_len, 2 * col] = window * np.cos(phase)
            kernels[lo : lo + win_len, 2 * col + 1] = window * np.sin(phase)
            norms[col] = window.sum()
        starts = centers + pad - group_len // 2
        segs = xpad[starts[:, None] + np.arange(group_len)[None, :]]
        proj = segs @ kernels  # [n_frames, 2 * n_group]
        re = proj[:, 0::2] / norms
        im = proj[:, 1::2] / norms
        power[group] = (re * re + im * im).T

    values = np.log(np.maximum(power, LOG_POWER_FLOOR))
    return Spectrogram(values=values, bin_frequencies=freqs, frame_hop=cfg.hop_length)


# ---------------------------------------------------------------------------
# Feature file format
# ---------------------------------------------------------------------------

def save_spectrogram(path, spec: Spectrogram) -> None:
    """Write the SPG1 binary format.

    Layout: magic "SPG1", u32 n_bins, u32 n_frames, f32-LE row-major
    values, f64-LE bin frequencies.  Values are stored in float32; a
    save/load/save round trip is byte-identical.
    """
    values = np.ascontiguousarray(spec.values, dtype="<f4")
    freqs = np.ascontiguousarray(spec.bin_frequencies, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_SPG_MAGIC)
        fh.write(struct.pack("<II", spec.n_bins, spec.n_frames))
        fh.write(values.tobytes())
        fh.write(freqs.tobytes())


def load_spectrogram(path) -> Spectrogram:
    """Read the SPG1 format; frame_hop is not stored and loads as 0."""
    raw = Path(path).read_bytes()
    if raw[:4] != _SPG_MAGIC:
        raise DataError(f"{path}: bad magic, not an SPG1 file")
    n_bins, n_frames = struct.unpack_from("<II", raw, 4)
    offset = 12
    n_vals = n_bins * n_frames
    expected = offset + 4 * n_vals + 8 * n_bins
    if len(raw) != expected:
        raise DataError(f"{path}: truncated SPG1 file ({len(raw)} != {expected} bytes)")
    values = np.frombuffer(raw, dtype="<f4", count=n_vals, offset=offset)
    freqs = np.frombuffer(raw, dtype="<f8", count=n_bins, offset=offset + 4 * n_vals)
    return Spectrogram(
        values=values.reshape(n_bins, n_frames).copy(),
        bin_frequencies=freqs.copy(),
        frame_hop=0,
    )
