import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofkit.audio import AudioBuffer, read_wav, resample_linear, write_wav
from spoofkit.errors import DataError


def write_pcm16(path, samples_i16, sr=16000, channels=1):
    data = np.asarray(samples_i16, dtype="<i2").tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, channels, sr, sr * 2 * channels,
                                 2 * channels, 16)
    hdr += b"data" + struct.pack("<I", len(data))
    path.write_bytes(hdr + data)


class TestReadWav:
    def test_pcm16_scaling(self, tmp_path):
        p = tmp_path / "a.wav"
        write_pcm16(p, [0, 16384, -32768])
        buf = read_wav(p)
        assert buf.sample_rate == 16000
        np.testing.assert_allclose(buf.samples, [0.0, 0.5, -1.0])

    def test_stereo_average_downmix(self, tmp_path):
        p = tmp_path / "st.wav"
        # interleaved L/R: L=32767 (~1.0), R=0
        write_pcm16(p, [32767, 0], channels=2)
        buf = read_wav(p)
        assert buf.samples.size == 1
        assert abs(buf.samples[0] - 0.5) < 1e-4

    def test_float32_input(self, tmp_path):
        p = tmp_path / "f.wav"
        data = np.array([0.25, -0.5], dtype="<f4").tobytes()
        hdr = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
        hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 3, 1, 16000, 64000, 4, 32)
        hdr += b"data" + struct.pack("<I", len(data))
        p.write_bytes(hdr + data)
        np.testing.assert_allclose(read_wav(p).samples, [0.25, -0.5])

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"OGGSjunkjunkjunk")
        with pytest.raises(DataError):
            read_wav(p)

    def test_unsupported_encoding(self, tmp_path):
        p = tmp_path / "u8.wav"
        hdr = b"RIFF" + struct.pack("<I", 37) + b"WAVE"
        hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 16000, 16000, 1, 8)
        hdr += b"data" + struct.pack("<I", 1) + b"\x80"
        p.write_bytes(hdr)
        with pytest.raises(DataError, match="unsupported"):
            read_wav(p)

    def test_zero_length_audio(self, tmp_path):
        p = tmp_path / "empty.wav"
        write_pcm16(p, [])
        with pytest.raises(DataError, match="zero-length"):
            read_wav(p)


class TestWriteWav:
    def test_single_sample_file_layout(self, tmp_path):
        p = tmp_path / "one.wav"
        write_wav(p, AudioBuffer([0.0], 16000))
        raw = p.read_bytes()
        assert raw[:4] == b"RIFF" and raw[8:12] == b"WAVE"
        # data chunk is the last 8+2 bytes: header + one 16-bit sample
        assert raw[-10:-6] == b"data"
        assert struct.unpack("<I", raw[-6:-2])[0] == 2 or struct.unpack("<I", raw[36:40])[0] == 2

    @pytest.mark.parametrize("value,stored", [(2.0, 32767), (-1.0, -32768), (1.0, 32767)])
    def test_clamping(self, tmp_path, value, stored):
        p = tmp_path / "c.wav"
        write_wav(p, AudioBuffer([value], 8000))
        q = np.frombuffer(p.read_bytes()[-2:], dtype="<i2")[0]
        assert q == stored

    def test_round_trip_within_one_lsb(self, tmp_path, rng):
        p = tmp_path / "rt.wav"
        original = rng.uniform(-1, 1, size=500)
        write_wav(p, AudioBuffer(original, 16000))
        back = read_wav(p)
        assert np.max(np.abs(back.samples - original)) <= 1.0 / 32768


class TestResampleLinear:
    def test_identity(self):
        buf = AudioBuffer([0.1, 0.2, 0.3], 16000)
        out = resample_linear(buf, 1.0)
        np.testing.assert_array_equal(out.samples, buf.samples)

    def test_exact_stride(self):
        out = resample_linear(AudioBuffer([0, 1, 2, 3], 16000), 2.0)
        np.testing.assert_allclose(out.samples, [0, 2])

    def test_interpolation_with_edge_hold(self):
        # positions 0, 0.5, 1.0, 1.5 against inputs [0, 1]
        out = resample_linear(AudioBuffer([0.0, 1.0], 16000), 0.5)
        np.testing.assert_allclose(out.samples, [0.0, 0.5, 1.0, 1.0])

    def test_sample_rate_unchanged(self):
        out = resample_linear(AudioBuffer(np.ones(100), 8000), 1.5)
        assert out.sample_rate == 8000

    @pytest.mark.parametrize("factor", [0.4, 2.5])
    def test_factor_out_of_range(self, factor):
        with pytest.raises(ValueError):
            resample_linear(AudioBuffer([0.0, 1.0], 16000), factor)

    @given(st.integers(10, 400), st.floats(0.5, 2.0))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_length(self, n, factor):
        buf = AudioBuffer(np.linspace(-0.5, 0.5, n), 16000)
        back = resample_linear(resample_linear(buf, factor), 1.0 / factor)
        assert abs(len(back) - n) <= 1


def test_audio_buffer_rejects_nan():
    with pytest.raises(ValueError):
        AudioBuffer([0.0, np.nan], 16000)


def test_audio_buffer_rejects_bad_rate():
    with pytest.raises(ValueError):
        AudioBuffer([0.0], 0)
