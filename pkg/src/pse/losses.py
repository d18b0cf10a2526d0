"""Spectral objectives: asymmetric compressed-magnitude MSE plus complex
compressed MSE, their weighted total, analytic gradients, and a
finite-difference checker.

The asymmetric term penalizes magnitude under-estimation only (it fires when
the estimate is quieter than the reference after compression), which is what
discourages over-suppression. All arithmetic here is float64: these are
evaluation metrics and the gradient check needs the headroom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import ComplexSpectrogram
from .errors import ConfigError, DimensionError

DEFAULT_COMPRESSION = 0.3
DEFAULT_WEIGHT_ASYM = 0.3
DEFAULT_WEIGHT_COMPLEX = 0.7


@dataclass
class LossReport:
    mse_asym: float
    mse_complex: float
    total: float
    compression: float
    weight_asym: float = DEFAULT_WEIGHT_ASYM
    weight_complex: float = DEFAULT_WEIGHT_COMPLEX


@dataclass
class LossGradient:
    """d(total)/d(re, im) of every estimate bin, with zero-magnitude bins flagged.

    The power law is not differentiable at zero magnitude; those bins get a
    zero subgradient and are marked in `zero_bins`.
    """

    d_re: np.ndarray  # (T, F) float64
    d_im: np.ndarray
    zero_bins: np.ndarray  # (T, F) bool


def _as_c128(s) -> np.ndarray:
    if isinstance(s, ComplexSpectrogram):
        s = s.data
    return np.asarray(s, dtype=np.complex128)


def _pair(s, s_hat) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_c128(s), _as_c128(s_hat)
    if a.shape != b.shape:
        raise DimensionError(f"spectrogram shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _check_c(c: float) -> float:
    if not 0.0 < c <= 1.0:
        raise ConfigError(f"compression exponent must be in (0, 1], got {c}")
    return float(c)


def _compress(z: np.ndarray, c: float) -> np.ndarray:
    mag = np.abs(z)
    ang = np.angle(z)
    return (mag**c) * (np.cos(ang) + 1j * np.sin(ang))


def mse_asym(s, s_hat, c: float = DEFAULT_COMPRESSION) -> float:
    """Mean squared positive part of |S|^c - |S_hat|^c (under-estimation only)."""
    a, b = _pair(s, s_hat)
    c = _check_c(c)
    diff = np.abs(a) ** c - np.abs(b) ** c
    return float(np.mean(np.maximum(diff, 0.0) ** 2))


def mse_complex(s, s_hat, c: float = DEFAULT_COMPRESSION) -> float:
    """Mean squared modulus of the difference of the compressed spectra."""
    a, b = _pair(s, s_hat)
    c = _check_c(c)
    return float(np.mean(np.abs(_compress(a, c) - _compress(b, c)) ** 2))


def loss_total(
    s,
    s_hat,
    c: float = DEFAULT_COMPRESSION,
    weight_asym: float = DEFAULT_WEIGHT_ASYM,
    weight_complex: float = DEFAULT_WEIGHT_COMPLEX,
) -> LossReport:
    """Weighted sum of the two terms (defaults 0.3 and 0.7)."""
    a = mse_asym(s, s_hat, c)
    m = mse_complex(s, s_hat, c)
    return LossReport(
        mse_asym=a,
        mse_complex=m,
        total=weight_asym * a + weight_complex * m,
        compression=c,
        weight_asym=weight_asym,
        weight_complex=weight_complex,
    )


def loss_grad(
    s,
    s_hat,
    c: float = DEFAULT_COMPRESSION,
    weight_asym: float = DEFAULT_WEIGHT_ASYM,
    weight_complex: float = DEFAULT_WEIGHT_COMPLEX,
) -> LossGradient:
    """Analytic gradient of loss_total w.r.t. each estimate bin."""
    ref, est = _pair(s, s_hat)
    c = _check_c(c)
    x, y = est.real, est.imag
    r = np.abs(est)
    zero = r == 0.0
    rs = np.where(zero, 1.0, r)  # placeholder radius; zeroed out below
    n_bins = ref.size

    # Asymmetric term: d/dr of max(|S|^c - r^c, 0)^2.
    dmag = np.abs(ref) ** c - r**c
    asym_r = np.where(dmag > 0, -2.0 * c * dmag * rs ** (c - 1.0), 0.0)
    da_dx = asym_r * x / rs
    da_dy = asym_r * y / rs

    # Complex term: compressed estimate is (r^{c-1} x, r^{c-1} y).
    comp_ref = _compress(ref, c)
    f = rs ** (c - 1.0)
    g = (c - 1.0) * rs ** (c - 3.0)
    ex = f * x
    ey = f * y
    res_x = comp_ref.real - ex
    res_y = comp_ref.imag - ey
    dc_dx = -2.0 * (res_x * (f + g * x * x) + res_y * (g * x * y))
    dc_dy = -2.0 * (res_x * (g * x * y) + res_y * (f + g * y * y))

    d_re = (weight_asym * da_dx + weight_complex * dc_dx) / n_bins
    d_im = (weight_asym * da_dy + weight_complex * dc_dy) / n_bins
    d_re[zero] = 0.0
    d_im[zero] = 0.0
    return LossGradient(d_re=d_re, d_im=d_im, zero_bins=zero)


def finite_difference_grad(s, s_hat, c: float, step: float = 1e-4, **weights) -> LossGradient:
    """Central-difference gradient of loss_total; the independent oracle."""
    ref, est = _pair(s, s_hat)
    d_re = np.zeros(est.shape, dtype=np.float64)
    d_im = np.zeros_like(d_re)
    for idx in np.ndindex(est.shape):
        for delta, out in ((step, d_re), (1j * step, d_im)):
            hi = est.copy()
            hi[idx] += delta
            lo = est.copy()
            lo[idx] -= delta
            out[idx] = (
                loss_total(ref, hi, c, **weights).total
                - loss_total(ref, lo, c, **weights).total
            ) / (2.0 * step)
    return LossGradient(d_re=d_re, d_im=d_im, zero_bins=np.abs(est) == 0.0)


def gradient_check(s, s_hat, c: float, step: float = 1e-4) -> float:
    """Max abs difference between analytic and central-difference gradients,
    normalized by the largest finite-difference component."""
    ana = loss_grad(s, s_hat, c)
    num = finite_difference_grad(s, s_hat, c, step)
    scale = max(np.max(np.abs(num.d_re)), np.max(np.abs(num.d_im)), 1e-12)
    err = max(np.max(np.abs(ana.d_re - num.d_re)), np.max(np.abs(ana.d_im - num.d_im)))
    return float(err / scale)
