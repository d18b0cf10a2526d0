"""Sub-band partition of the spectrogram, per-band projection into feature
space (split), the symmetric mask-producing merge, and mask application.

Feature tensors are laid out (B, C, T, K): batch, channels, frames, bands.
Band b of width w consumes/produces 2w interleaved (re, im) values per frame;
the interleaving order is normative for the weight format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import ComplexSpectrogram
from .errors import ConfigError, DimensionError, WeightValidationError
from .numerics import (
    BatchNormParams,
    LayerNormParams,
    Linear,
    batch_norm_infer,
    layer_norm,
)


@dataclass(frozen=True)
class BandScheme:
    """Ordered contiguous sub-band widths; widths sum to the bin count F."""

    widths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or any(w < 1 for w in self.widths):
            raise ConfigError(f"band widths must all be >= 1, got {self.widths}")

    @property
    def n_bands(self) -> int:
        return len(self.widths)

    @property
    def total_bins(self) -> int:
        return sum(self.widths)

    def edges(self) -> list[tuple[int, int]]:
        """Half-open bin range of each band, covering 0..F-1 exactly once."""
        out, start = [], 0
        for w in self.widths:
            out.append((start, start + w))
            start += w
        return out


_DEFAULT_WIDTHS = {
    # 48 kHz, F=481: 2-bin bands to 2 kHz, then 10, 20, 40-bin bands,
    # closing with (20, 21) bins up to and including Nyquist.
    (48000, 960): (2,) * 20 + (10,) * 8 + (20,) * 6 + (40,) * 5 + (20, 21),
    # 16 kHz, F=161: same 41-band layout scaled down.
    (16000, 320): (2,) * 20 + (5,) * 12 + (7,) * 8 + (5,),
}


def default_scheme(sample_rate: int, fft_size: int) -> BandScheme:
    """The built-in 41-band partition (finer at low frequency)."""
    try:
        widths = _DEFAULT_WIDTHS[(sample_rate, fft_size)]
    except KeyError:
        raise ConfigError(
            f"no default band scheme for sample_rate={sample_rate}, fft_size={fft_size}; "
            f"supported: {sorted(_DEFAULT_WIDTHS)}"
        ) from None
    scheme = BandScheme(widths)
    if scheme.total_bins != fft_size // 2 + 1:
        raise ConfigError("default scheme does not cover the spectrum")  # pragma: no cover
    return scheme


@dataclass
class BandSplitWeights:
    norms: list[BatchNormParams]  # per band, over 2w interleaved features
    fcs: list[Linear]  # per band, 2w -> N


@dataclass
class BandMergeWeights:
    norms: list[LayerNormParams]  # per band, over N channels
    fc1: list[Linear]  # per band, N -> mlp_hidden
    fc2: list[Linear]  # per band, mlp_hidden -> 2w


def interleave(band: np.ndarray) -> np.ndarray:
    """(T, w) complex -> (T, 2w) float32 as (re0, im0, re1, im1, ...)."""
    frames, width = band.shape
    out = np.empty((frames, 2 * width), dtype=np.float32)
    out[:, 0::2] = band.real
    out[:, 1::2] = band.imag
    return out


def deinterleave(flat: np.ndarray) -> np.ndarray:
    """(T, 2w) float32 -> (T, w) complex64, inverse of interleave()."""
    return (flat[:, 0::2] + 1j * flat[:, 1::2]).astype(np.complex64)


def band_split(x: ComplexSpectrogram, scheme: BandScheme, weights: BandSplitWeights) -> np.ndarray:
    """Project each sub-band into the shared feature space.

    Per band: interleaved (re, im) per-frame vectors are normalized with that
    band's stored statistics, then mapped 2w -> N. Output is (1, N, T, K).
    """
    if scheme.total_bins != x.n_bins:
        raise WeightValidationError(
            f"scheme covers {scheme.total_bins} bins but spectrogram has {x.n_bins}"
        )
    _check_split_weights(scheme, weights)
    n_features = weights.fcs[0].weight.shape[0]
    frames = x.n_frames
    out = np.empty((1, n_features, frames, scheme.n_bands), dtype=np.float32)
    for b, (lo, hi) in enumerate(scheme.edges()):
        v = interleave(x.data[:, lo:hi])  # (T, 2w)
        norm = weights.norms[b]
        vn = batch_norm_infer(v.T, norm.mean, norm.var, norm.gamma, norm.beta)  # (2w, T)
        fc = weights.fcs[b]
        out[0, :, :, b] = fc.weight @ vn + fc.bias[:, None]
    return out


def band_merge(h: np.ndarray, scheme: BandScheme, weights: BandMergeWeights) -> np.ndarray:
    """Produce the complex T x F mask, symmetric to band_split.

    Per band: layer-normalize over channels, MLP N -> mlp_hidden (tanh) ->
    2w (linear), deinterleaved into that band's mask bins.
    """
    if h.ndim != 4 or h.shape[0] != 1:
        raise DimensionError(f"band_merge expects (1, N, T, K) features, got {h.shape}")
    _check_merge_weights(scheme, weights, h.shape[1])
    if h.shape[3] != scheme.n_bands:
        raise DimensionError(f"feature bands {h.shape[3]} != scheme bands {scheme.n_bands}")
    frames = h.shape[2]
    mask = np.empty((frames, scheme.total_bins), dtype=np.complex64)
    for b, (lo, hi) in enumerate(scheme.edges()):
        xb = h[0, :, :, b]  # (N, T)
        norm = weights.norms[b]
        xn = layer_norm(xb, norm.gamma, norm.beta, axis=0).T  # (T, N)
        hid = np.tanh(xn @ weights.fc1[b].weight.T + weights.fc1[b].bias)
        flat = hid @ weights.fc2[b].weight.T + weights.fc2[b].bias  # (T, 2w)
        mask[:, lo:hi] = deinterleave(flat)
    return mask


def apply_mask(x: ComplexSpectrogram, mask: np.ndarray) -> ComplexSpectrogram:
    """Complex ratio mask: S_hat[t, f] = mask[t, f] * X[t, f]."""
    mask = np.asarray(mask)
    if mask.shape != x.data.shape:
        raise DimensionError(f"mask shape {mask.shape} != spectrogram shape {x.data.shape}")
    return ComplexSpectrogram(
        (mask * x.data).astype(np.complex64), x.sample_rate, x.fft_size, x.hop
    )


def _check_split_weights(scheme: BandScheme, weights: BandSplitWeights) -> None:
    if len(weights.norms) != scheme.n_bands or len(weights.fcs) != scheme.n_bands:
        raise WeightValidationError(
            f"split weights cover {len(weights.fcs)} bands, scheme has {scheme.n_bands}"
        )
    for b, w in enumerate(scheme.widths):
        if weights.norms[b].mean.shape != (2 * w,):
            raise WeightValidationError(f"split norm {b} expects {2 * w} features")
        if weights.fcs[b].weight.shape[1] != 2 * w:
            raise WeightValidationError(f"split fc {b} expects {2 * w} input features")


def _check_merge_weights(scheme: BandScheme, weights: BandMergeWeights, n_features: int) -> None:
    if len(weights.norms) != scheme.n_bands or len(weights.fc2) != scheme.n_bands:
        raise WeightValidationError(
            f"merge weights cover {len(weights.fc2)} bands, scheme has {scheme.n_bands}"
        )
    for b, w in enumerate(scheme.widths):
        if weights.norms[b].gamma.shape != (n_features,):
            raise WeightValidationError(f"merge norm {b} expects {n_features} channels")
        if weights.fc1[b].weight.shape[1] != n_features:
            raise WeightValidationError(f"merge fc1 {b} expects {n_features} input features")
        if weights.fc2[b].weight.shape[0] != 2 * w:
            raise WeightValidationError(f"merge fc2 {b} must emit {2 * w} values")
