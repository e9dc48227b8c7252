import numpy as np
import pytest

from spoofkit.audio import AudioBuffer


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_sine(freq_hz: float, duration_s: float = 1.0, sr: int = 16000,
              amplitude: float = 0.5) -> AudioBuffer:
    t = np.arange(int(duration_s * sr)) / sr
    return AudioBuffer(amplitude * np.sin(2.0 * np.pi * freq_hz * t), sr)


def speech_like(rng: np.random.Generator, duration_s: float = 1.0, sr: int = 16000) -> AudioBuffer:
    """Rough voiced-signal stand-in: harmonics, AM envelope, leading/trailing pauses."""
    n = int(duration_s * sr)
    t = np.arange(n) / sr
    f0 = rng.uniform(90, 250)
    x = np.zeros(n)
    for k in range(1, 12):
        x += np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
    am = 0.3 + 0.7 * (0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(2, 5) * t))
    x *= am
    pause = min(int(0.1 * sr), n // 8)
    x[:pause] *= 0.0
    x[-pause:] *= 0.0
    x *= rng.uniform(0.2, 0.6) / np.max(np.abs(x))
    return AudioBuffer(x, sr)
