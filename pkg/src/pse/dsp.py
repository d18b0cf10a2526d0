"""Waveform <-> complex spectrogram conversion and power-law magnitude compression.

Framing is causal: the analysis buffer is pre-padded with fft_size - hop
zeros, so frame t covers input samples <= t*hop + hop. The input is also
right-padded to a whole number of hops, giving T = ceil(len/hop) + 1 frames.
Square-root Hann analysis and synthesis windows at 50% overlap satisfy
constant overlap-add, so istft(stft(x)) reconstructs x away from the edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import ConfigError, DimensionError
from .numerics import as_f32

SUPPORTED_RATES = (16000, 48000)


@dataclass
class Waveform:
    samples: np.ndarray  # float32, nominally in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_1d(as_f32(self.samples))
        if self.samples.ndim != 1:
            raise DimensionError(f"waveform must be mono 1-D, got shape {self.samples.shape}")
        if self.sample_rate not in SUPPORTED_RATES:
            raise ConfigError(
                f"sample rate {self.sample_rate} unsupported (expected one of {SUPPORTED_RATES})"
            )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ComplexSpectrogram:
    data: np.ndarray  # (T, F) complex64
    sample_rate: int
    fft_size: int
    hop: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex64)
        if self.data.ndim != 2:
            raise DimensionError(f"spectrogram must be (T, F), got shape {self.data.shape}")
        if self.hop != self.fft_size // 2:
            raise ConfigError(f"hop {self.hop} must equal fft_size/2 = {self.fft_size // 2}")
        if self.data.shape[1] != self.fft_size // 2 + 1:
            raise DimensionError(
                f"bin count {self.data.shape[1]} != fft_size/2 + 1 = {self.fft_size // 2 + 1}"
            )

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]


def default_fft_size(sample_rate: int) -> int:
    """20 ms frame: 960 samples at 48 kHz, 320 at 16 kHz."""
    return int(round(0.020 * sample_rate))


def sqrt_hann(n: int) -> np.ndarray:
    """Square root of the periodic Hann window (COLA at 50% overlap)."""
    k = np.arange(n, dtype=np.float64)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)).astype(np.float32)


def stft(x: Waveform, fft_size: int | None = None, hop: int | None = None) -> ComplexSpectrogram:
    """Causal one-sided STFT with a sqrt-Hann analysis window.

    fft_size defaults to 20 ms of audio; hop must be fft_size/2 (COLA).
    """
    n = default_fft_size(x.sample_rate) if fft_size is None else int(fft_size)
    if n % 2 != 0 or n < 2:
        raise ConfigError(f"fft_size must be even and >= 2, got {n}")
    h = n // 2 if hop is None else int(hop)
    if h != n // 2:
        raise ConfigError(f"hop {h} must be fft_size/2 = {n // 2} for overlap-add identity")

    samples = x.samples
    n_hops = max(1, math.ceil(len(samples) / h))
    frames = n_hops + 1
    padded = np.zeros((frames - 1) * h + n, dtype=np.float32)
    padded[n - h : n - h + len(samples)] = samples
    window = sqrt_hann(n)
    view = np.lib.stride_tricks.sliding_window_view(padded, n)[:: h]
    spec = scipy.fft.rfft(view[:frames] * window, axis=1).astype(np.complex64)
    return ComplexSpectrogram(spec, x.sample_rate, n, h)


def istft(s: ComplexSpectrogram) -> Waveform:
    """Overlap-add inverse with a sqrt-Hann synthesis window.

    Returns T*hop samples; the caller trims to the original length. The
    leading fft_size - hop pre-pad region is stripped here.
    """
    n, h, frames = s.fft_size, s.hop, s.n_frames
    window = sqrt_hann(n)
    time_frames = scipy.fft.irfft(s.data, n=n, axis=1).astype(np.float32) * window
    out = np.zeros((frames - 1) * h + n, dtype=np.float32)
    for t in range(frames):
        out[t * h : t * h + n] += time_frames[t]
    return Waveform(out[n - h : n - h + frames * h], s.sample_rate)


def compress(s: ComplexSpectrogram, c: float) -> ComplexSpectrogram:
    """Power-law magnitude compression |z|^c * e^{j angle(z)}.

    Zero bins map to zero (the phase of zero is taken as zero).
    """
    if not 0.0 < c <= 1.0:
        raise ConfigError(f"compression exponent must be in (0, 1], got {c}")
    mag = np.abs(s.data)
    ang = np.angle(s.data)
    out = (mag**np.float32(c)) * (np.cos(ang) + 1j * np.sin(ang))
    return ComplexSpectrogram(out.astype(np.complex64), s.sample_rate, s.fft_size, s.hop)
