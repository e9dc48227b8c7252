import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofkit.audio import AudioBuffer
from spoofkit.g711 import alaw_decode, alaw_encode, codec_compand, mulaw_decode, mulaw_encode
from tests.conftest import make_sine


def test_silence_round_trip_within_one_step():
    silent = AudioBuffer(np.zeros(256), 8000)
    for law in ("alaw", "mulaw"):
        out = codec_compand(silent, law)
        # one A-law/mu-law quantization step at the origin is 16/32768
        assert np.max(np.abs(out.samples)) <= 16.0 / 32768


def test_mulaw_full_scale_sine_snr():
    sine = make_sine(440.0, duration_s=0.1, amplitude=0.99)
    out = codec_compand(sine, "mulaw")
    noise = out.samples - sine.samples
    snr_db = 10 * np.log10(np.sum(sine.samples**2) / np.sum(noise**2))
    assert snr_db > 30.0


def test_alaw_deterministic():
    sine = make_sine(333.0, duration_s=0.05)
    a = codec_compand(sine, "alaw").samples
    b = codec_compand(sine, "alaw").samples
    np.testing.assert_array_equal(a, b)


def test_unknown_law_rejected():
    with pytest.raises(ValueError):
        codec_compand(make_sine(100.0, 0.01), "gsm")


@given(st.integers(-32768, 32767))
@settings(max_examples=300, deadline=None)
def test_mulaw_error_bounded(v):
    pcm = np.array([v])
    decoded = mulaw_decode(mulaw_encode(pcm))[0]
    # worst-case step in the top mu-law segment is 1024, half-step rounding
    # plus the 32635 clip allows a bit more at the very top
    assert abs(int(decoded) - v) <= 700


@given(st.integers(-32768, 32767))
@settings(max_examples=300, deadline=None)
def test_alaw_error_bounded(v):
    pcm = np.array([v])
    decoded = alaw_decode(alaw_encode(pcm))[0]
    # top A-law segment step is 1024 in 16-bit units
    assert abs(int(decoded) - v) <= 512


def test_mulaw_codes_cover_byte_range(rng):
    pcm = (rng.uniform(-1, 1, 20000) * 32767).astype(np.int32)
    codes = mulaw_encode(pcm)
    assert codes.dtype == np.uint8
    assert codes.min() >= 0 and codes.max() <= 255


def test_alaw_idempotent_after_first_pass():
    sine = make_sine(222.0, duration_s=0.05, amplitude=0.8)
    once = codec_compand(sine, "alaw")
    twice = codec_compand(once, "alaw")
    np.testing.assert_allclose(once.samples, twice.samples, atol=1.0 / 32768)
