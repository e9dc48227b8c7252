"""Desk-scale synthetic corpus: harmonic "speech" and spoofed variants.

Bonafide utterances are harmonic complexes with randomized fundamental,
formant-like envelopes and syllable-rate amplitude modulation.  Spoofed
utterances run the same generator and then apply a detectable artifact:
every spoof receives an upward spectral-tilt shift, and each belongs to a
family that decides the rest:

  tilt    stronger tilt shift only
  phase   base tilt plus randomized spectral phase above 2 kHz
  splice  base tilt plus repeated short frames (splicing traces)

The family is recorded in the manifest recipe under the "artifact" key so
experiments can hold families out of training.  Given a seed, generation
is bit-exact reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, write_wav
from .manifest import AugmentRecipe, ManifestEntry, TrialManifest, derive_seed

FAMILIES = ("tilt", "phase", "splice")

BASE_TILT = (1.2, 1.7)
STRONG_TILT = (2.0, 2.6)
PHASE_CUTOFF_HZ = 2000.0


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    sample_rate: int = 16000
    duration_range: tuple[float, float] = (1.0, 3.0)
    f0_range: tuple[float, float] = (80.0, 300.0)
    families: tuple[str, ...] = FAMILIES

    def __post_init__(self):
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown artifact families: {sorted(unknown)}")


def _harmonic_utterance(rng: np.random.Generator, cfg: SyntheticCorpusConfig) -> np.ndarray:
    sr = cfg.sample_rate
    dur = rng.uniform(*cfg.duration_range)
    n = int(dur * sr)
    t = np.arange(n) / sr

    f0 = rng.uniform(*cfg.f0_range)
    n_harm = max(int(5000.0 // f0), 3)
    freqs = f0 * np.arange(1, n_harm + 1)

    # formant-like envelope: three Lorentzian resonances plus a gentle rolloff
    centers = np.array([rng.uniform(300, 900), rng.uniform(900, 2200), rng.uniform(2200, 3600)])
    widths = np.array([rng.uniform(60, 150), rng.uniform(80, 220), rng.uniform(120, 320)])
    gains = rng.uniform(0.5, 1.0, size=3)
    env = np.zeros_like(freqs)
    for c, w, g in zip(centers, widths, gains):
        env += g * w**2 / ((freqs - c) ** 2 + w**2)
    env += 0.05
    amps = env / np.sqrt(np.arange(1, n_harm + 1))

    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_harm)
    x = (amps[:, None] * np.sin(2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)

    # syllable-rate amplitude modulation
    am_rate = rng.uniform(2.0, 5.0)
    am_depth = rng.uniform(0.3, 0.7)
    am_phase = rng.uniform(0.0, 2.0 * np.pi)
    x *= (1.0 - am_depth) + am_depth * (0.5 + 0.5 * np.sin(2.0 * np.pi * am_rate * t + am_phase))

    fade = min(int(0.010 * sr), n // 4)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    x[:fade] *= ramp
    x[-fade:] *= ramp[::-1]

    x += 1e-3 * rng.standard_normal(n)
    peak = rng.uniform(0.2, 0.7)
    x *= peak / np.max(np.abs(x))
    return x


def _apply_tilt(x: np.ndarray, sr: int, gamma: float) -> np.ndarray:
    spectrum = np.fft.rfft(x)
    f = np.fft.rfftfreq(x.size, d=1.0 / sr)
    y = np.fft.irfft(spectrum * (1.0 + f / 500.0) ** gamma, n=x.size)
    peak = np.max(np.abs(x))
    return y * (peak / np.max(np.abs(y)))


def _randomize_high_phase(x: np.ndarray, sr: int, rng: np.random.Generator) -> np.ndarray:
    spectrum = np.fft.rfft(x)
    f = np.fft.rfftfreq(x.size, d=1.0 / sr)
    high = f > PHASE_CUTOFF_HZ
    mags = np.abs(spectrum[high])
    spectrum[high] = mags * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=mags.size))
    y = np.fft.irfft(spectrum, n=x.size)
    peak = np.max(np.abs(x))
    return y * (peak / np.max(np.abs(y)))


def _repeat_frames(x: np.ndarray, sr: int, rng: np.random.Generator) -> np.ndarray:
    y = x.copy()
    n_splices = int(rng.integers(3, 7))
    for _ in range(n_splices):
        seg_len = int(rng.uniform(0.030, 0.060) * sr)
        if y.size <= 2 * seg_len + 1:
            break
        start = int(rng.integers(0, y.size - 2 * seg_len))
        # overwrite the following segment with a repeat of this one
        y[start + seg_len : start + 2 * seg_len] = y[start : start + seg_len]
    return y


def _spoof_utterance(rng: np.random.Generator, cfg: SyntheticCorpusConfig) -> tuple[np.ndarray, str]:
    x = _harmonic_utterance(rng, cfg)
    family = cfg.families[int(rng.integers(len(cfg.families)))]
    sr = cfg.sample_rate
    if family == "tilt":
        x = _apply_tilt(x, sr, rng.uniform(*STRONG_TILT))
    elif family == "phase":
        x = _apply_tilt(x, sr, rng.uniform(*BASE_TILT))
        x = _randomize_high_phase(x, sr, rng)
    else:  # splice
        x = _apply_tilt(x, sr, rng.uniform(*BASE_TILT))
        x = _repeat_frames(x, sr, rng)
    return x, family


def generate_synthetic_corpus(
    out_dir,
    n_per_class: int,
    seed: int,
    cfg: SyntheticCorpusConfig = SyntheticCorpusConfig(),
    prefix: str = "utt",
) -> TrialManifest:
    """Write n_per_class bonafide + n_per_class spoof WAVs and a manifest.

    WAVs land in out_dir/wav; the manifest is returned (callers decide
    where to save it).  The same seed always produces bit-identical files.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    wav_dir = Path(out_dir) / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_per_class):
        rng = np.random.default_rng(derive_seed(seed, "bonafide", i))
        utt = f"{prefix}-b{i:04d}"
        path = wav_dir / f"{utt}.wav"
        write_wav(path, AudioBuffer(_harmonic_utterance(rng, cfg), cfg.sample_rate))
        entries.append(ManifestEntry(utt_id=utt, path=str(path), label="bonafide"))
    for i in range(n_per_class):
        rng = np.random.default_rng(derive_seed(seed, "spoof", i))
        utt = f"{prefix}-s{i:04d}"
        path = wav_dir / f"{utt}.wav"
        samples, family = _spoof_utterance(rng, cfg)
        write_wav(path, AudioBuffer(samples, cfg.sample_rate))
        entries.append(
            ManifestEntry(utt_id=utt, path=str(path), label="spoof",
                          recipe=AugmentRecipe(extra={"artifact": family}))
        )
    return TrialManifest(entries=entries)


def generate_noise_pool(out_dir, count: int, seed: int, sr: int = 16000) -> dict[str, str]:
    """White, pink and modulated-pink noise WAVs for augmentation tests."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool = {}
    kinds = ("white", "pink", "buzz")
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, "noise", i))
        kind = kinds[i % len(kinds)]
        n = int(rng.uniform(2.0, 4.0) * sr)
        x = rng.standard_normal(n)
        if kind in ("pink", "buzz"):
            spectrum = np.fft.rfft(x)
            f = np.fft.rfftfreq(n, d=1.0 / sr)
            spectrum /= np.sqrt(np.maximum(f, 1.0))
            x = np.fft.irfft(spectrum, n=n)
        if kind == "buzz":
            rate = rng.uniform(1.0, 8.0)
            x *= 0.4 + 0.6 * (0.5 + 0.5 * np.sin(2 * np.pi * rate * np.arange(n) / sr))
        x *= 0.5 / np.max(np.abs(x))
        name = f"noise{i:03d}"
        path = out_dir / f"{name}.wav"
        write_wav(path, AudioBuffer(x, sr))
        pool[name] = str(path)
    return pool


def generate_rir_pool(out_dir, count: int, seed: int, sr: int = 16000) -> dict[str, str]:
    """Synthetic impulse responses: direct path plus exponential noise tail."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool = {}
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, "rir", i))
        decay = rng.uniform(0.05, 0.25)
        n = int(3 * decay * sr)
        t = np.arange(n) / sr
        tail = rng.standard_normal(n) * np.exp(-t / decay)
        tail /= np.max(np.abs(tail))
        h = np.zeros(n + 8)
        h[0] = 1.0  # direct path stays the peak tap
        h[8:] = rng.uniform(0.1, 0.4) * tail
        name = f"rir{i:03d}"
        path = out_dir / f"{name}.wav"
        write_wav(path, AudioBuffer(h, sr))
        pool[name] = str(path)
    return pool
