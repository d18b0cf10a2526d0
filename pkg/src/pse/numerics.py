"""Dense float32 kernels: matmul, convolutions, GRU, softmax, normalization,
activations, and a SplitMix64-seeded initializer.

Every function here is pure. Layouts are channel-major (C first) unless
stated otherwise, and all arithmetic is 32-bit IEEE-754 with accumulation
in at least 32-bit precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DimensionError, NumericError, WeightValidationError

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4B7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO53 = float(1 << 53)


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class SeededRng:
    """SplitMix64 stream: identical seed, identical outputs, on any platform.

    The k-th output (1-based) is mix64(seed + k * gamma), so bulk draws can
    be vectorized without changing the stream position.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self.drawn = 0

    def next_u64(self) -> int:
        self.drawn += 1
        return _mix64((self.seed + self.drawn * _GAMMA) & _MASK64)

    def u01(self) -> float:
        """Uniform in [0, 1): top 53 bits of the next output over 2^53."""
        return (self.next_u64() >> 11) / _TWO53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.u01()

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n < 1:
            raise ConfigError(f"randint needs n >= 1, got {n}")
        return min(int(self.u01() * n), n - 1)

    def u01_array(self, count: int) -> np.ndarray:
        """`count` u01 draws at once; advances the stream exactly `count` steps."""
        idx = np.arange(self.drawn + 1, self.drawn + count + 1, dtype=np.uint64)
        self.drawn += count
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        return (z >> np.uint64(11)).astype(np.float64) / _TWO53

    def spawn(self, index: int) -> "SeededRng":
        """Independent child stream, e.g. one per generated clip."""
        return SeededRng(_mix64((self.seed + (index + 1) * _GAMMA) & _MASK64))


@dataclass
class Linear:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class BatchNormParams:
    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray


@dataclass
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray


@dataclass
class GruWeights:
    """Single-direction GRU parameters.

    Gate rows are stacked in the order (reset, update, candidate); this
    ordering and the update rule h_t = (1-z)*n + z*h_{t-1} are normative
    for the on-disk weight format.
    """

    w_ih: np.ndarray  # (3H, I)
    w_hh: np.ndarray  # (3H, H)
    b_ih: np.ndarray  # (3H,)
    b_hh: np.ndarray  # (3H,)

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_ih.shape[1]


def as_f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


def matmul(a, b) -> np.ndarray:
    """Matrix product of a (m, p) and b (p, n), float32 accumulation."""
    a = as_f32(a)
    b = as_f32(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return a @ b


def apply_linear(x, lin: Linear) -> np.ndarray:
    """Affine map along the last axis: x (..., in) -> (..., out)."""
    if x.shape[-1] != lin.weight.shape[1]:
        raise DimensionError(
            f"linear: input features {x.shape[-1]} != weight in-features {lin.weight.shape[1]}"
        )
    return x @ lin.weight.T + lin.bias


def softmax(x, scale: float = 1.0, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax of x/scale along `axis` (max-subtracted)."""
    x = as_f32(x)
    if scale <= 0:
        raise ConfigError(f"softmax scale must be positive, got {scale}")
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax input contains non-finite values")
    z = x / np.float32(scale)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def gru_step(x, h, w: GruWeights) -> np.ndarray:
    """One GRU update: x (..., I), h (..., H) -> new hidden (..., H).

    The reset gate multiplies the recurrent candidate term (cuDNN-style):
    n = tanh(Wx_n + b_n + r * (Wh_n h + c_n)).
    """
    hidden = w.hidden
    gx = x @ w.w_ih.T + w.b_ih
    gh = h @ w.w_hh.T + w.b_hh
    r = _sigmoid(gx[..., :hidden] + gh[..., :hidden])
    z = _sigmoid(gx[..., hidden : 2 * hidden] + gh[..., hidden : 2 * hidden])
    n = np.tanh(gx[..., 2 * hidden :] + r * gh[..., 2 * hidden :])
    return (1.0 - z) * n + z * h


def gru_sequence(x, h0, w: GruWeights, direction: str = "forward") -> np.ndarray:
    """Run a GRU along the leading axis of x.

    x: (T, I) or (T, B, I); h0: (H,) or (B, H). Returns the hidden state at
    every step, (T, H) or (T, B, H). "backward" scans from the last step and
    returns outputs aligned to the input positions.
    """
    x = as_f32(x)
    if direction not in ("forward", "backward"):
        raise ConfigError(f"unknown GRU direction {direction!r}")
    if x.ndim not in (2, 3) or x.shape[-1] != w.input_size:
        raise DimensionError(
            f"gru_sequence: input {x.shape} incompatible with weights "
            f"(I={w.input_size}, H={w.hidden})"
        )
    if w.w_ih.shape[0] != 3 * w.hidden or w.b_ih.shape != (3 * w.hidden,):
        raise DimensionError("gru_sequence: gate dimensions inconsistent")
    if direction == "backward":
        return gru_sequence(x[::-1], h0, w, "forward")[::-1]

    hidden = w.hidden
    steps = x.shape[0]
    h0 = as_f32(h0)
    if h0.shape[-1] != hidden:
        raise DimensionError(f"h0 shape {h0.shape} does not end in H={hidden}")
    h = np.broadcast_to(h0, x.shape[1:-1] + (hidden,)).copy()
    gx = x @ w.w_ih.T + w.b_ih  # input projections for all steps at once
    out = np.empty(x.shape[:-1] + (hidden,), dtype=np.float32)
    w_hh_t = np.ascontiguousarray(w.w_hh.T)
    for t in range(steps):
        gh = h @ w_hh_t + w.b_hh
        g = gx[t]
        r = _sigmoid(g[..., :hidden] + gh[..., :hidden])
        z = _sigmoid(g[..., hidden : 2 * hidden] + gh[..., hidden : 2 * hidden])
        n = np.tanh(g[..., 2 * hidden :] + r * gh[..., 2 * hidden :])
        h = (1.0 - z) * n + z * h
        out[t] = h
    return out


def conv2d_depthwise_causal(x, kernel, kt: int | None = None, kk: int | None = None) -> np.ndarray:
    """Per-channel 2-D convolution, causal along time.

    x: (C, T, K); kernel: (C, kt, kk). The time axis is padded with kt-1
    zeros on the past side only, so output frame t depends on input frames
    <= t; the band axis is padded symmetrically with (kk-1)/2 zeros.
    kernel[:, -1, (kk-1)//2] is the tap on the current frame and band.
    """
    x = as_f32(x)
    kernel = as_f32(kernel)
    if x.ndim != 3 or kernel.ndim != 3 or kernel.shape[0] != x.shape[0]:
        raise DimensionError(
            f"depthwise conv: input {x.shape} incompatible with kernel {kernel.shape}"
        )
    kt = kernel.shape[1] if kt is None else kt
    kk = kernel.shape[2] if kk is None else kk
    if (kt, kk) != kernel.shape[1:]:
        raise DimensionError(f"kernel shape {kernel.shape} != declared ({kt}, {kk})")
    if kk % 2 == 0:
        raise ConfigError(f"band kernel size must be odd, got {kk}")
    if kt < 1:
        raise ConfigError(f"time kernel size must be >= 1, got {kt}")

    channels, frames, bands = x.shape
    half = (kk - 1) // 2
    padded = np.zeros((channels, frames + kt - 1, bands + kk - 1), dtype=np.float32)
    padded[:, kt - 1 :, half : half + bands] = x
    out = np.zeros_like(x)
    for i in range(kt):
        for j in range(kk):
            out += kernel[:, i : i + 1, j : j + 1] * padded[:, i : i + frames, j : j + bands]
    return out


def pointwise_conv(x, w, b) -> np.ndarray:
    """1x1 convolution over channels: out[c,t,k] = b[c] + sum_i w[c,i] x[i,t,k]."""
    x = as_f32(x)
    w = as_f32(w)
    b = as_f32(b)
    if x.ndim != 3 or w.ndim != 2 or w.shape[1] != x.shape[0] or b.shape != (w.shape[0],):
        raise DimensionError(
            f"pointwise conv: input {x.shape}, weight {w.shape}, bias {b.shape}"
        )
    return np.tensordot(w, x, axes=(1, 0)) + b[:, None, None]


def batch_norm_infer(x, mean, var, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    """Normalize with stored statistics along channel axis 0 (inference only).

    No batch statistics are ever computed here; mean/var come from the
    weight store. eps=0 is allowed as long as var stays strictly positive.
    """
    x = as_f32(x)
    mean, var, gamma, beta = (as_f32(v) for v in (mean, var, gamma, beta))
    c = x.shape[0]
    for name, v in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        if v.shape != (c,):
            raise DimensionError(f"batch norm {name} shape {v.shape} != ({c},)")
    if np.any(var < 0):
        raise WeightValidationError("negative variance in batch-norm statistics")
    if eps < 0:
        raise ConfigError(f"batch norm eps must be >= 0, got {eps}")
    denom = var + np.float32(eps)
    if np.any(denom <= 0):
        raise WeightValidationError("batch norm var + eps must be positive")
    shp = (-1,) + (1,) * (x.ndim - 1)
    scale = (gamma / np.sqrt(denom)).reshape(shp)
    return (x - mean.reshape(shp)) * scale + beta.reshape(shp)


def layer_norm(x, gamma, beta, axis: int = 0, eps: float = 1e-5) -> np.ndarray:
    """Normalize over the channel `axis` at every other position."""
    x = as_f32(x)
    gamma = as_f32(gamma)
    beta = as_f32(beta)
    if gamma.shape != (x.shape[axis],) or beta.shape != gamma.shape:
        raise DimensionError(
            f"layer norm params {gamma.shape} do not match axis extent {x.shape[axis]}"
        )
    mu = x.mean(axis=axis, keepdims=True)
    var = x.var(axis=axis, keepdims=True)
    shp = [1] * x.ndim
    shp[axis] = -1
    xn = (x - mu) / np.sqrt(var + np.float32(eps))
    return xn * gamma.reshape(shp) + beta.reshape(shp)


def prelu(x, alpha, channel_axis: int = 0) -> np.ndarray:
    """x where x >= 0, alpha[c]*x elsewhere; alpha indexed along channel_axis."""
    x = as_f32(x)
    alpha = as_f32(alpha)
    if alpha.shape != (x.shape[channel_axis],):
        raise DimensionError(
            f"prelu alpha length {alpha.shape} != channel extent {x.shape[channel_axis]}"
        )
    shp = [1] * x.ndim
    shp[channel_axis] = -1
    return np.where(x >= 0, x, alpha.reshape(shp) * x)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_uniform(rng: SeededRng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """Glorot-uniform draw on [-a, a], a = sqrt(6/(fan_in+fan_out)).

    Values come from the SplitMix64 stream mapped to [0,1) by the top 53
    bits over 2^53, filled in row-major order; deterministic given seed.
    """
    if fan_in < 1 or fan_out < 1:
        raise ConfigError(f"fans must be >= 1, got ({fan_in}, {fan_out})")
    shape = tuple(int(s) for s in shape)
    bound = glorot_bound(fan_in, fan_out)
    u = rng.u01_array(int(np.prod(shape))) if shape else rng.u01_array(1)
    return (bound * (2.0 * u - 1.0)).astype(np.float32).reshape(shape)
