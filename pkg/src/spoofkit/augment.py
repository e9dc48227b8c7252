"""Online data augmentation: noise mixing at exact SNR, reverberation,
speed perturbation, active-level normalization, companding codecs, and
chunk-size handling for variable-length training.

Every operation preserves the sample rate and is pure given (input,
recipe, seed), so parallel workers stay reproducible.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, read_wav, resample_linear, write_wav
from .dsp import Spectrogram, fast_convolve
from .errors import DataError
from .g711 import codec_compand
from .manifest import NATIVE_CODECS, AugmentRecipe

logger = logging.getLogger(__name__)

SPEED_FACTORS = (0.9, 1.0, 1.1)
TARGET_LEVEL_DBOV = -26.0

# P.56-style estimator constants
_SMOOTHING_TIME_S = 0.030
_ACTIVITY_MARGIN_DB = 15.9
_LADDER_STEP_DB = 1.5
_LADDER_FLOOR_DB = -90.0


def _loop_to_length(x: np.ndarray, n: int) -> np.ndarray:
    if x.size >= n:
        return x[:n]
    reps = int(np.ceil(n / x.size))
    return np.tile(x, reps)[:n]


def _one_pole_smooth(x: np.ndarray, g: float, chunk: int = 512) -> np.ndarray:
    """y[n] = g*y[n-1] + (1-g)*x[n], evaluated chunkwise via scaled cumsums.

    Chunk size keeps g^(-k) bounded so the closed form stays in range.
    """
    out = np.empty_like(x)
    state = 0.0
    decay = np.power(g, np.arange(1, chunk + 1))
    inv = np.power(g, -np.arange(chunk, dtype=np.float64))
    for start in range(0, x.size, chunk):
        seg = x[start : start + chunk]
        m = seg.size
        c = np.cumsum(seg * inv[:m])
        out[start : start + m] = decay[:m] * state + (1.0 - g) * c * (decay[:m] / g)
        state = out[start + m - 1]
    return out


def mix_noise_at_snr(clean: AudioBuffer, noise: AudioBuffer, snr_db: float) -> AudioBuffer:
    """Add noise scaled so the clean-to-noise power ratio is exactly snr_db.

    The gain is g = rms(clean) / (rms(noise) * 10^(snr_db/20)).  If the mix
    peaks above 1 the whole mix is rescaled (clamping would bias the SNR).
    A silent clean input is returned unchanged with a warning.
    """
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("clean and noise sample rates differ")
    noise_seg = _loop_to_length(noise.samples, len(clean))
    noise_rms = float(np.sqrt(np.mean(np.square(noise_seg)))) if noise_seg.size else 0.0
    if noise_rms <= 0.0:
        raise ValueError("noise is silent (zero RMS)")
    clean_rms = clean.rms()
    if clean_rms <= 0.0:
        logger.warning("mix_noise_at_snr: silent clean input, returning it unchanged")
        return clean
    gain = clean_rms / (noise_rms * 10.0 ** (snr_db / 20.0))
    mix = clean.samples + gain * noise_seg
    peak = float(np.max(np.abs(mix)))
    if peak > 1.0:
        mix = mix / peak
    return clean.replace(mix)


def convolve_rir(clean: AudioBuffer, rir: AudioBuffer) -> AudioBuffer:
    """Convolve with a room impulse response, aligned to the direct path.

    The full convolution is shifted so the RIR's peak tap lands at delay
    zero, truncated to the input length, and rescaled to the input RMS.
    """
    if clean.sample_rate != rir.sample_rate:
        raise ValueError("clean and RIR sample rates differ")
    if len(rir) == 0:
        raise ValueError("empty RIR")
    full = fast_convolve(clean.samples, rir.samples)
    peak = int(np.argmax(np.abs(rir.samples)))
    out = full[peak : peak + len(clean)]
    if out.size < len(clean):
        out = np.pad(out, (0, len(clean) - out.size))
    out_rms = float(np.sqrt(np.mean(np.square(out)))) if out.size else 0.0
    in_rms = clean.rms()
    if out_rms > 0.0 and in_rms > 0.0:
        out = out * (in_rms / out_rms)
    return clean.replace(out)


def speed_perturb(audio: AudioBuffer, factor: float,
                  allowed=SPEED_FACTORS) -> AudioBuffer:
    """Change playback speed by `factor` via linear resampling."""
    if allowed is not None and not any(abs(factor - f) < 1e-9 for f in allowed):
        raise ValueError(f"speed factor {factor} not in allowed set {allowed}")
    return resample_linear(audio, factor)


def measure_active_level(audio: AudioBuffer) -> float:
    """Active speech level in dBov by a simplified P.56 procedure.

    A two-stage exponential envelope (30 ms time constant) is compared
    against a ladder of thresholds; at each rung the candidate level is the
    mean square energy over the samples whose envelope exceeds the rung.
    The reported level is interpolated where the candidate sits 15.9 dB
    above its rung.  Raises ValueError when no active region exists.
    """
    x = audio.samples
    if x.size == 0 or not np.any(x != 0.0):
        raise ValueError("all-silence input: no active speech region")
    g = float(np.exp(-1.0 / (_SMOOTHING_TIME_S * audio.sample_rate)))
    env = _one_pole_smooth(_one_pole_smooth(np.abs(x), g), g)
    sum_sq = float(np.sum(np.square(x)))

    n_rungs = int(-_LADDER_FLOOR_DB / _LADDER_STEP_DB) + 1
    rung_db = -_LADDER_STEP_DB * np.arange(n_rungs)
    thresholds = np.power(10.0, rung_db / 20.0)
    env_sorted = np.sort(env)
    counts = env_sorted.size - np.searchsorted(env_sorted, thresholds, side="left")

    prev = None  # (delta, level) at the previous rung
    for j in range(n_rungs):
        if counts[j] == 0:
            continue
        level_db = 10.0 * np.log10(sum_sq / counts[j])
        delta = level_db - rung_db[j]
        if delta >= _ACTIVITY_MARGIN_DB:
            if prev is None:
                return float(level_db)
            d_prev, l_prev = prev
            alpha = (_ACTIVITY_MARGIN_DB - d_prev) / (delta - d_prev)
            return float(l_prev + alpha * (level_db - l_prev))
        prev = (delta, level_db)
    raise ValueError("active level estimation failed: margin never reached")


def active_level_normalize(
    audio: AudioBuffer, target_dbov: float = TARGET_LEVEL_DBOV
) -> tuple[AudioBuffer, float]:
    """Scale so the active speech level equals target_dbov.

    Returns (normalized audio, measured level before scaling).  The gain is
    applied without clamping; a peak above full scale is reported via a
    warning so SNR-sensitive callers can rescale instead.
    """
    measured = measure_active_level(audio)
    gain = 10.0 ** ((target_dbov - measured) / 20.0)
    out = audio.samples * gain
    peak = float(np.max(np.abs(out)))
    if peak > 1.0:
        logger.warning(
            "active_level_normalize: output peaks at %.3f (>1.0) after gain %.3f dB",
            peak, 20.0 * np.log10(gain),
        )
    return audio.replace(out), measured


def chunk_to_length(
    spec: Spectrogram, n_frames: int, rng: np.random.Generator | None = None
) -> Spectrogram:
    """Truncate or cyclically pad a spectrogram to exactly n_frames frames.

    Longer inputs are cut from offset 0 (eval) or a uniform random offset
    when an rng is supplied (train).  Shorter inputs repeat cyclically.
    """
    if n_frames <= 0:
        raise ValueError("n_frames must be positive")
    total = spec.n_frames
    if total == n_frames:
        return spec
    if total > n_frames:
        offset = 0 if rng is None else int(rng.integers(0, total - n_frames + 1))
        values = spec.values[:, offset : offset + n_frames]
    else:
        idx = np.arange(n_frames) % total
        values = spec.values[:, idx]
    return Spectrogram(values=values, bin_frequencies=spec.bin_frequencies,
                       frame_hop=spec.frame_hop)


def sample_chunk_size(rng: np.random.Generator, lo: int = 500, hi: int = 700) -> int:
    """Uniform integer chunk size in [lo, hi]; drawn once per training batch."""
    return int(rng.integers(lo, hi + 1))


# ---------------------------------------------------------------------------
# External codec hooks and recipe application
# ---------------------------------------------------------------------------

def run_external_codec(audio: AudioBuffer, command_template: str) -> AudioBuffer:
    """Round-trip audio through an external encoder command.

    The template receives {input} and {output} WAV paths; the command must
    write a WAV file (the encode/decode cycle is the command's business).
    """
    with tempfile.TemporaryDirectory(prefix="spoofkit-codec-") as tmp:
        src = Path(tmp) / "in.wav"
        dst = Path(tmp) / "out.wav"
        write_wav(src, audio)
        cmd = [part.format(input=str(src), output=str(dst))
               for part in shlex.split(command_template)]
        proc = subprocess.run(cmd, capture_output=True)
        if proc.returncode != 0 or not dst.exists():
            raise DataError(
                f"external codec command failed (rc={proc.returncode}): "
                f"{proc.stderr.decode(errors='replace')[:200]}"
            )
        return read_wav(dst)


@dataclass
class AugmentPools:
    """Named noise/RIR waveforms plus external codec command templates."""

    noises: dict[str, str]
    rirs: dict[str, str]
    codec_hooks: dict[str, str]

    @classmethod
    def empty(cls) -> "AugmentPools":
        return cls(noises={}, rirs={}, codec_hooks={})

    @classmethod
    def from_dirs(cls, noise_dir=None, rir_dir=None, codec_hooks=None) -> "AugmentPools":
        def scan(d):
            if d is None or not Path(d).is_dir():
                return {}
            return {p.stem: str(p) for p in sorted(Path(d).glob("*.wav"))}

        return cls(noises=scan(noise_dir), rirs=scan(rir_dir),
                   codec_hooks=dict(codec_hooks or {}))

    def available_codecs(self) -> tuple[str, ...]:
        return NATIVE_CODECS + tuple(sorted(self.codec_hooks))


def apply_recipe(audio: AudioBuffer, recipe: AugmentRecipe,
                 pools: AugmentPools | None = None) -> AudioBuffer:
    """Apply one recipe in a fixed order: speed, reverb, noise, codec, level."""
    pools = pools or AugmentPools.empty()
    out = audio
    if recipe.speed is not None:
        out = speed_perturb(out, recipe.speed)
    if recipe.rir is not None:
        if recipe.rir not in pools.rirs:
            raise DataError(f"recipe references unknown RIR {recipe.rir!r}")
        out = convolve_rir(out, read_wav(pools.rirs[recipe.rir]))
    if recipe.noise is not None:
        noise_id, snr_db = recipe.noise
        if noise_id not in pools.noises:
            raise DataError(f"recipe references unknown noise {noise_id!r}")
        out = mix_noise_at_snr(out, read_wav(pools.noises[noise_id]), snr_db)
    if recipe.codec is not None:
        if recipe.codec in NATIVE_CODECS:
            out = codec_compand(out, recipe.codec)
        elif recipe.codec in pools.codec_hooks:
            out = run_external_codec(out, pools.codec_hooks[recipe.codec])
        else:
            raise DataError(f"no encoder available for codec {recipe.codec!r}")
    if recipe.normalize:
        out, _ = active_level_normalize(out)
    return out


@dataclass(frozen=True)
class AugmentPolicy:
    """Probabilities and ranges for online recipe sampling.

    SNR ranges follow the usual Kaldi-style conventions per noise category;
    everything here is a declared default, not a measured value.
    """

    noise_prob: float = 0.5
    reverb_prob: float = 0.3
    speed_prob: float = 0.0
    snr_range_db: tuple[float, float] = (0.0, 15.0)

    def sample(self, rng: np.random.Generator, pools: AugmentPools) -> AugmentRecipe:
        noise = None
        rir = None
        speed = None
        if pools.noises and rng.random() < self.noise_prob:
            noise_id = sorted(pools.noises)[int(rng.integers(len(pools.noises)))]
            snr = float(rng.uniform(*self.snr_range_db))
            noise = (noise_id, snr)
        if pools.rirs and rng.random() < self.reverb_prob:
            rir = sorted(pools.rirs)[int(rng.integers(len(pools.rirs)))]
        if self.speed_prob > 0 and rng.random() < self.speed_prob:
            speed = float(SPEED_FACTORS[int(rng.integers(len(SPEED_FACTORS)))])
            if speed == 1.0:
                speed = None
        return AugmentRecipe(noise=noise, rir=rir, speed=speed)
