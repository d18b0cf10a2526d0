"""Minimal RIFF/WAVE reader and writer.

Supports mono PCM 16-bit and IEEE float 32-bit at 16 or 48 kHz; everything
else is rejected with a descriptive error. PCM16 samples are decoded by
dividing by 32768.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dsp import SUPPORTED_RATES, Waveform
from .errors import PseError

_FMT_PCM = 1
_FMT_FLOAT = 3


class WavError(PseError):
    """Malformed or unsupported WAV file."""


def wav_read(path) -> Waveform:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise WavError(f"{path}: fmt chunk too short ({size} bytes)")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise WavError(f"{path}: data chunk truncated ({len(body)} of {size} bytes)")
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise WavError(f"{path}: missing fmt chunk")
    if payload is None:
        raise WavError(f"{path}: missing data chunk")
    audio_format, channels, rate, _byte_rate, block_align, bits = fmt
    if channels != 1:
        raise WavError(f"{path}: only mono supported, got {channels} channels")
    if rate not in SUPPORTED_RATES:
        raise WavError(f"{path}: sample rate {rate} unsupported (expected {SUPPORTED_RATES})")

    if audio_format == _FMT_PCM and bits == 16:
        if len(payload) % 2:
            raise WavError(f"{path}: PCM16 payload has odd byte count")
        samples = np.frombuffer(payload, dtype="<i2").astype(np.float32) / 32768.0
    elif audio_format == _FMT_FLOAT and bits == 32:
        if len(payload) % 4:
            raise WavError(f"{path}: float32 payload length not a multiple of 4")
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    else:
        raise WavError(
            f"{path}: unsupported encoding (format tag {audio_format}, {bits}-bit)"
        )
    if block_align not in (0, bits // 8):
        raise WavError(f"{path}: block align {block_align} inconsistent with {bits}-bit mono")
    return Waveform(samples, rate)


def wav_write(path, wav: Waveform, encoding: str = "float32") -> None:
    if encoding == "pcm16":
        fmt_tag, bits = _FMT_PCM, 16
        scaled = np.round(wav.samples.astype(np.float64) * 32768.0)
        payload = np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
    elif encoding == "float32":
        fmt_tag, bits = _FMT_FLOAT, 32
        payload = wav.samples.astype("<f4").tobytes()
    else:
        raise WavError(f"unsupported encoding {encoding!r} (use 'pcm16' or 'float32')")

    block_align = bits // 8
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack(
                "<IHHIIHH",
                16,
                fmt_tag,
                1,
                wav.sample_rate,
                wav.sample_rate * block_align,
                block_align,
                bits,
            ),
            b"data",
            struct.pack("<I", len(payload)),
        ]
    )
    Path(path).write_bytes(header + payload)
