"""G.711 companding: 8-bit A-law (A=87.6) and mu-law (mu=255) codecs.

Segmented encoders/decoders following the classic reference routines,
vectorized over int16 sample arrays.  A round trip through either codec
leaves only quantization noise; identical input always yields identical
output.
"""

from __future__ import annotations

import numpy as np

from .audio import AudioBuffer

_MU_BIAS = 0x84
_MU_CLIP = 32635
_ALAW_SEG_END = np.array([0x1F, 0x3F, 0x7F, 0xFF, 0x1FF, 0x3FF, 0x7FF, 0xFFF])


def _float_to_int16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x * 32768.0), -32768, 32767).astype(np.int32)


def _exponent(x: np.ndarray) -> np.ndarray:
    """floor(log2(x)) via frexp; exact for positive integers below 2**53."""
    return np.frexp(x.astype(np.float64))[1] - 1


def mulaw_encode(pcm: np.ndarray) -> np.ndarray:
    """int16 linear -> 8-bit mu-law codes."""
    pcm = pcm.astype(np.int32)
    sign = np.where(pcm < 0, 0x80, 0x00)
    mag = np.minimum(np.abs(pcm), _MU_CLIP) + _MU_BIAS
    exp = np.clip(_exponent(mag) - 7, 0, 7)
    mantissa = (mag >> (exp + 3)) & 0x0F
    return (~(sign | (exp << 4) | mantissa) & 0xFF).astype(np.uint8)


def mulaw_decode(code: np.ndarray) -> np.ndarray:
    """8-bit mu-law codes -> int16 linear."""
    c = (~code.astype(np.int32)) & 0xFF
    sign = c & 0x80
    exp = (c >> 4) & 0x07
    mantissa = c & 0x0F
    mag = (((mantissa << 3) + _MU_BIAS) << exp) - _MU_BIAS
    return np.where(sign != 0, -mag, mag).astype(np.int16)


def alaw_encode(pcm: np.ndarray) -> np.ndarray:
    """int16 linear -> 8-bit A-law codes."""
    pcm = pcm.astype(np.int32) >> 3  # 13-bit magnitude domain
    mask = np.where(pcm >= 0, 0xD5, 0x55)
    mag = np.where(pcm >= 0, pcm, -pcm - 1)
    seg = np.searchsorted(_ALAW_SEG_END, mag, side="left")
    out = np.where(seg >= 8, 0x7F, 0)
    low = np.where(seg < 2, (mag >> 1) & 0x0F, (mag >> np.minimum(seg, 7)) & 0x0F)
    out = np.where(seg >= 8, out, (seg << 4) | low)
    return ((out ^ mask) & 0xFF).astype(np.uint8)


def alaw_decode(code: np.ndarray) -> np.ndarray:
    """8-bit A-law codes -> int16 linear."""
    c = code.astype(np.int32) ^ 0x55
    t = (c & 0x0F) << 4
    seg = (c >> 4) & 0x07
    t = np.where(seg == 0, t + 8, np.where(seg == 1, t + 0x108, (t + 0x108) << np.maximum(seg - 1, 0)))
    return np.where(c & 0x80, t, -t).astype(np.int16)


def codec_compand(audio: AudioBuffer, law: str) -> AudioBuffer:
    """Round the waveform through an 8-bit G.711 codec.

    law is "alaw" or "mulaw".  The output differs from the input only by
    companding quantization noise.
    """
    pcm = _float_to_int16(audio.samples)
    if law == "mulaw":
        decoded = mulaw_decode(mulaw_encode(pcm))
    elif law == "alaw":
        decoded = alaw_decode(alaw_encode(pcm))
    else:
        raise ValueError(f"unknown companding law {law!r}, expected 'alaw' or 'mulaw'")
    return audio.replace(decoded.astype(np.float64) / 32768.0)
