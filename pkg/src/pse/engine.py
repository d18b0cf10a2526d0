"""Model assembly: band split -> n x (dual-path block + speaker rescale) ->
band merge -> complex mask, in offline and streaming form.

This module owns the model configuration, the named weight container and its
on-disk format, deterministic initialization, and the parameter/MAC counters.

Weight file format (".pbw"): magic b"PBW1"; an 8-byte little-endian unsigned
manifest length; a UTF-8 JSON manifest {format_version, config, tensors:
[{name, shape, dtype: "f32le", offset, nbytes}]}; then one blob of
little-endian float32 payloads. Offsets are relative to the blob start and
16-byte aligned per tensor.

Canonical tensor names (normative for the file format), in order:
  split/band{j}/norm/{mean,var,gamma,beta}, split/band{j}/fc/{weight,bias}
  merge/band{j}/norm/{gamma,beta}, merge/band{j}/{fc1,fc2}/{weight,bias}
  block{i}/temporal/norm/{gamma,beta}, .../gru/{w_ih,w_hh,b_ih,b_hh},
      .../fc/{weight,bias}
  block{i}/band/norm/{gamma,beta}, .../gru/{w_ih,w_hh,b_ih,b_hh}_{fwd[,bwd]},
      .../fc/{weight,bias}
  block{i}/sam/fc/{weight,bias}, .../conv0_dw/kernel,
      .../conv0_dw/norm/{mean,var,gamma,beta}, .../conv0_dw/prelu/alpha,
      .../conv0_pw/{weight,bias} (+ norm/prelu), .../conv1/{weight,bias}
      (+ norm/prelu)
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.special import expit

from . import bands as bands_mod
from .attention import SamWeights, sam_forward
from .backbone import BandWeights, DprnnBlockWeights, TemporalWeights, dprnn_block
from .bands import BandMergeWeights, BandScheme, BandSplitWeights, default_scheme
from .dsp import ComplexSpectrogram, Waveform, default_fft_size, istft, sqrt_hann, stft
from .errors import (
    ConfigError,
    DimensionError,
    UsageError,
    WeightLoadError,
    WeightValidationError,
)
from .numerics import (
    BatchNormParams,
    GruWeights,
    LayerNormParams,
    Linear,
    SeededRng,
    as_f32,
    init_uniform,
)

MAGIC = b"PBW1"
FORMAT_VERSION = 1
_ALIGN = 16

# Published footprint of the system this engine reproduces, used by the CLI
# for side-by-side comparison only.
REFERENCE_PARAMS = 5.97e6
REFERENCE_MACS_PER_S = 5.54e9
REFERENCE_RTF = 0.41
REFERENCE_RTF_NOTE = "single thread, Core i5 @ 2.4 GHz"


@dataclass(frozen=True)
class ModelConfig:
    sample_rate: int = 48000
    fft_size: int | None = None  # defaults to 20 ms of audio
    hop: int | None = None  # fft_size / 2
    scheme: BandScheme | None = None  # defaults to the built-in 41-band partition
    n_features: int = 128  # C, feature channels per band
    gru_hidden: int = 128  # H
    mlp_hidden: int = 512
    attn_channels: int = 128  # C1
    embed_dim: int = 192  # C2
    n_blocks: int = 6
    kt: int = 3
    kk: int = 3
    # Unidirectional keeps the default MAC budget near the reference figure;
    # set True for the bidirectional band RNN variant.
    band_bidirectional: bool = False
    compression: float = 0.3
    loss_weight_asym: float = 0.3
    loss_weight_complex: float = 0.7

    def __post_init__(self):
        if self.fft_size is None:
            object.__setattr__(self, "fft_size", default_fft_size(self.sample_rate))
        if self.hop is None:
            object.__setattr__(self, "hop", self.fft_size // 2)
        if self.scheme is None:
            object.__setattr__(self, "scheme", default_scheme(self.sample_rate, self.fft_size))
        self.validate()

    def validate(self) -> None:
        ints = {
            "sample_rate": self.sample_rate,
            "fft_size": self.fft_size,
            "hop": self.hop,
            "n_features": self.n_features,
            "gru_hidden": self.gru_hidden,
            "mlp_hidden": self.mlp_hidden,
            "attn_channels": self.attn_channels,
            "embed_dim": self.embed_dim,
            "n_blocks": self.n_blocks,
            "kt": self.kt,
            "kk": self.kk,
        }
        for name, value in ints.items():
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value}")
        if self.hop != self.fft_size // 2:
            raise ConfigError(f"hop {self.hop} must equal fft_size/2 = {self.fft_size // 2}")
        if self.scheme.total_bins != self.n_bins:
            raise ConfigError(
                f"band scheme covers {self.scheme.total_bins} bins, expected {self.n_bins}"
            )
        if self.kk % 2 == 0:
            raise ConfigError(f"kk must be odd, got {self.kk}")
        if not 0.0 < self.compression <= 1.0:
            raise ConfigError(f"compression must be in (0, 1], got {self.compression}")
        if self.loss_weight_asym < 0 or self.loss_weight_complex < 0:
            raise ConfigError("loss weights must be non-negative")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def n_bands(self) -> int:
        return self.scheme.n_bands

    @property
    def latency_samples(self) -> int:
        return self.fft_size - self.hop

    @classmethod
    def default(cls, sample_rate: int = 48000, **overrides) -> "ModelConfig":
        return cls(sample_rate=sample_rate, **overrides)

    def to_json_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "fft_size": self.fft_size,
            "hop": self.hop,
            "band_widths": list(self.scheme.widths),
            "n_features": self.n_features,
            "gru_hidden": self.gru_hidden,
            "mlp_hidden": self.mlp_hidden,
            "attn_channels": self.attn_channels,
            "embed_dim": self.embed_dim,
            "n_blocks": self.n_blocks,
            "kt": self.kt,
            "kk": self.kk,
            "band_bidirectional": self.band_bidirectional,
            "compression": self.compression,
            "loss_weight_asym": self.loss_weight_asym,
            "loss_weight_complex": self.loss_weight_complex,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        widths = d.pop("band_widths")
        return cls(scheme=BandScheme(tuple(widths)), **d)


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: tuple[int, ...]
    init: str  # "glorot" | "zeros" | "ones" | "alpha"
    fan_in: int = 1
    fan_out: int = 1


def _norm_specs(prefix: str, n: int, with_stats: bool) -> list[TensorSpec]:
    specs = []
    if with_stats:
        specs.append(TensorSpec(f"{prefix}/mean", (n,), "zeros"))
        specs.append(TensorSpec(f"{prefix}/var", (n,), "ones"))
    specs.append(TensorSpec(f"{prefix}/gamma", (n,), "ones"))
    specs.append(TensorSpec(f"{prefix}/beta", (n,), "zeros"))
    return specs


def _linear_specs(prefix: str, n_out: int, n_in: int) -> list[TensorSpec]:
    return [
        TensorSpec(f"{prefix}/weight", (n_out, n_in), "glorot", n_in, n_out),
        TensorSpec(f"{prefix}/bias", (n_out,), "zeros"),
    ]


def _gru_specs(prefix: str, n_in: int, hidden: int, suffix: str = "") -> list[TensorSpec]:
    return [
        TensorSpec(f"{prefix}/w_ih{suffix}", (3 * hidden, n_in), "glorot", n_in, hidden),
        TensorSpec(f"{prefix}/w_hh{suffix}", (3 * hidden, hidden), "glorot", hidden, hidden),
        TensorSpec(f"{prefix}/b_ih{suffix}", (3 * hidden,), "zeros"),
        TensorSpec(f"{prefix}/b_hh{suffix}", (3 * hidden,), "zeros"),
    ]


def expected_tensor_specs(config: ModelConfig) -> list[TensorSpec]:
    """Every tensor of a model in canonical order, with shapes and init rules."""
    n, h, c1, c2 = config.n_features, config.gru_hidden, config.attn_channels, config.embed_dim
    mlp, kt, kk = config.mlp_hidden, config.kt, config.kk
    specs: list[TensorSpec] = []
    for j, w in enumerate(config.scheme.widths):
        specs += _norm_specs(f"split/band{j}/norm", 2 * w, with_stats=True)
        specs += _linear_specs(f"split/band{j}/fc", n, 2 * w)
    for j, w in enumerate(config.scheme.widths):
        specs += _norm_specs(f"merge/band{j}/norm", n, with_stats=False)
        specs += _linear_specs(f"merge/band{j}/fc1", mlp, n)
        specs += _linear_specs(f"merge/band{j}/fc2", 2 * w, mlp)
    d_band = h * (2 if config.band_bidirectional else 1)
    for i in range(config.n_blocks):
        specs += _norm_specs(f"block{i}/temporal/norm", n, with_stats=False)
        specs += _gru_specs(f"block{i}/temporal/gru", n, h)
        specs += _linear_specs(f"block{i}/temporal/fc", n, h)
        specs += _norm_specs(f"block{i}/band/norm", n, with_stats=False)
        specs += _gru_specs(f"block{i}/band/gru", n, h, "_fwd")
        if config.band_bidirectional:
            specs += _gru_specs(f"block{i}/band/gru", n, h, "_bwd")
        specs += _linear_specs(f"block{i}/band/fc", n, d_band)
        specs += _linear_specs(f"block{i}/sam/fc", c1, c2)
        specs.append(
            TensorSpec(f"block{i}/sam/conv0_dw/kernel", (n, kt, kk), "glorot", kt * kk, kt * kk)
        )
        specs += _norm_specs(f"block{i}/sam/conv0_dw/norm", n, with_stats=True)
        specs.append(TensorSpec(f"block{i}/sam/conv0_dw/prelu/alpha", (n,), "alpha"))
        specs += _linear_specs(f"block{i}/sam/conv0_pw", c1, n)
        specs += _norm_specs(f"block{i}/sam/conv0_pw/norm", c1, with_stats=True)
        specs.append(TensorSpec(f"block{i}/sam/conv0_pw/prelu/alpha", (c1,), "alpha"))
        specs += _linear_specs(f"block{i}/sam/conv1", n, n)
        specs += _norm_specs(f"block{i}/sam/conv1/norm", n, with_stats=True)
        specs.append(TensorSpec(f"block{i}/sam/conv1/prelu/alpha", (n,), "alpha"))
    return specs


class WeightStore:
    """Ordered name -> float32 array container."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self._tensors = {name: as_f32(arr) for name, arr in tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise WeightValidationError(f"missing tensor {name!r}") from None

    def __setitem__(self, name: str, value) -> None:
        self._tensors[name] = as_f32(value)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def param_count(self) -> int:
        return sum(arr.size for arr in self._tensors.values())

    def param_count_by_module(self) -> dict[str, int]:
        """Walk the store, grouping sizes as the closed-form counter does."""
        out = {"split": 0, "merge": 0, "temporal": 0, "band": 0, "sam": 0}
        for name, arr in self._tensors.items():
            head = name.split("/", 2)
            group = head[0] if head[0] in ("split", "merge") else head[1]
            out[group] += arr.size
        return out

    def validate(self, config: ModelConfig) -> None:
        """Check completeness, shapes, and statistic ranges against a config."""
        expected = expected_tensor_specs(config)
        expected_names = {s.name for s in expected}
        for name in self._tensors:
            if name not in expected_names:
                raise WeightValidationError(f"unexpected tensor {name!r} for this config")
        for spec in expected:
            arr = self[spec.name]
            if arr.shape != spec.shape:
                raise WeightValidationError(
                    f"tensor {spec.name!r} has shape {arr.shape}, expected {spec.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise WeightValidationError(f"tensor {spec.name!r} contains non-finite values")
            if spec.name.endswith("/var") and np.any(arr < 0):
                raise WeightValidationError(f"tensor {spec.name!r} has negative variance")


def build(config: ModelConfig, seed: int) -> tuple[WeightStore, "Engine"]:
    """Deterministically initialize a model and wrap it in an engine.

    Weight matrices and conv kernels are Glorot-uniform from one SplitMix64
    stream consumed in canonical tensor order; biases/means/betas start at 0,
    variances/gammas at 1, and PReLU slopes at 0.25.
    """
    config.validate()
    rng = SeededRng(seed)
    tensors: dict[str, np.ndarray] = {}
    for spec in expected_tensor_specs(config):
        if spec.init == "glorot":
            tensors[spec.name] = init_uniform(rng, spec.shape, spec.fan_in, spec.fan_out)
        elif spec.init == "zeros":
            tensors[spec.name] = np.zeros(spec.shape, dtype=np.float32)
        elif spec.init == "ones":
            tensors[spec.name] = np.ones(spec.shape, dtype=np.float32)
        else:  # alpha
            tensors[spec.name] = np.full(spec.shape, 0.25, dtype=np.float32)
    store = WeightStore(tensors)
    return store, Engine(config, store)


def force_identity_mask(store: WeightStore, config: ModelConfig) -> WeightStore:
    """Rewrite the merge stage so every band emits the unit mask 1+0j.

    Diagnostic construction: zeroing the merge MLP and setting the output
    bias to the interleaved (1, 0) pattern makes the engine a pass-through,
    which bounds the pipeline's numerical error.
    """
    for j, w in enumerate(config.scheme.widths):
        store[f"merge/band{j}/fc1/weight"] = np.zeros((config.mlp_hidden, config.n_features))
        store[f"merge/band{j}/fc1/bias"] = np.zeros(config.mlp_hidden)
        store[f"merge/band{j}/fc2/weight"] = np.zeros((2 * w, config.mlp_hidden))
        bias = np.zeros(2 * w, dtype=np.float32)
        bias[0::2] = 1.0
        store[f"merge/band{j}/fc2/bias"] = bias
    return store


def _unpack_norm(store: WeightStore, prefix: str, with_stats: bool):
    if with_stats:
        return BatchNormParams(
            store[f"{prefix}/mean"],
            store[f"{prefix}/var"],
            store[f"{prefix}/gamma"],
            store[f"{prefix}/beta"],
        )
    return LayerNormParams(store[f"{prefix}/gamma"], store[f"{prefix}/beta"])


def _unpack_linear(store: WeightStore, prefix: str) -> Linear:
    return Linear(store[f"{prefix}/weight"], store[f"{prefix}/bias"])


def _unpack_gru(store: WeightStore, prefix: str, suffix: str = "") -> GruWeights:
    return GruWeights(
        store[f"{prefix}/w_ih{suffix}"],
        store[f"{prefix}/w_hh{suffix}"],
        store[f"{prefix}/b_ih{suffix}"],
        store[f"{prefix}/b_hh{suffix}"],
    )


@dataclass
class StreamState:
    """Mutable per-stream state; single-owner, zeroed by reset()."""

    temporal_h: list[np.ndarray]  # per block, (K, H)
    conv_hist: list[np.ndarray]  # per block, (kt-1, C, K), oldest first
    analysis_buf: np.ndarray  # (fft_size - hop,) last raw input samples
    ola_tail: np.ndarray  # (fft_size - hop,) pending synthesis overlap
    frames_done: int = 0

    def reset(self) -> None:
        for arr in self.temporal_h + self.conv_hist:
            arr[:] = 0.0
        self.analysis_buf[:] = 0.0
        self.ola_tail[:] = 0.0
        self.frames_done = 0


def _fold_bn(norm: BatchNormParams) -> tuple[np.ndarray, np.ndarray]:
    """Batch norm as an affine pair (scale, shift)."""
    scale = norm.gamma / np.sqrt(norm.var + np.float32(1e-5))
    return scale, norm.beta - norm.mean * scale


@dataclass
class _StreamGru:
    """GRU weights rearranged for the per-frame scan: transposed matrices,
    with the reset/update biases folded into the input projection."""

    w_ih_T: np.ndarray  # (I, 3H)
    w_hh_T: np.ndarray  # (H, 3H)
    gx_bias: np.ndarray  # (3H,) = b_ih + [b_hh(r), b_hh(z), 0]
    b_hh_n: np.ndarray  # (H,)
    hidden: int

    @classmethod
    def from_weights(cls, w: GruWeights) -> "_StreamGru":
        hidden = w.hidden
        gx_bias = w.b_ih.copy()
        gx_bias[: 2 * hidden] += w.b_hh[: 2 * hidden]
        return cls(
            w_ih_T=np.ascontiguousarray(w.w_ih.T),
            w_hh_T=np.ascontiguousarray(w.w_hh.T),
            gx_bias=gx_bias,
            b_hh_n=w.b_hh[2 * hidden :].copy(),
            hidden=hidden,
        )


def _gru_scan(gx: np.ndarray, g: _StreamGru, reverse: bool, out: np.ndarray) -> np.ndarray:
    """Single-sequence GRU scan over gx (steps, 3H) into out (steps, H)."""
    hidden = g.hidden
    h = np.zeros(hidden, dtype=np.float32)
    gh = np.empty(3 * hidden, dtype=np.float32)
    gates = np.empty(2 * hidden, dtype=np.float32)
    cand = np.empty(hidden, dtype=np.float32)
    zc = np.empty(hidden, dtype=np.float32)
    order = range(gx.shape[0] - 1, -1, -1) if reverse else range(gx.shape[0])
    for t in order:
        np.dot(h, g.w_hh_T, out=gh)
        np.add(gx[t, : 2 * hidden], gh[: 2 * hidden], out=gates)
        expit(gates, out=gates)
        np.add(gh[2 * hidden :], g.b_hh_n, out=cand)
        cand *= gates[:hidden]
        cand += gx[t, 2 * hidden :]
        np.tanh(cand, out=cand)
        z = gates[hidden:]
        np.subtract(1.0, z, out=zc)
        ho = out[t]
        np.multiply(z, h, out=ho)
        cand *= zc
        ho += cand
        h = ho
    return out


@dataclass
class _StreamBlock:
    """One block's weights in streaming-friendly form (see _precompute_stream)."""

    t_gamma: np.ndarray  # (N, 1)
    t_beta: np.ndarray
    t_w_ih_T: np.ndarray
    t_w_hh_T: np.ndarray
    t_b_ih: np.ndarray
    t_b_hh: np.ndarray
    t_fc_wT: np.ndarray  # (H, N)
    t_fc_b: np.ndarray
    b_gamma: np.ndarray
    b_beta: np.ndarray
    b_fwd: _StreamGru
    b_bwd: _StreamGru | None
    b_fc_wT: np.ndarray  # (dH, N)
    b_fc_b: np.ndarray
    dw_kernel: np.ndarray  # (C, kt, kk), BN scale folded in
    dw_shift: np.ndarray  # (C, 1)
    dw_alpha: np.ndarray  # (C, 1)
    pw_w: np.ndarray  # (C1, C), BN folded
    pw_b: np.ndarray  # (C1, 1)
    pw_alpha: np.ndarray  # (C1, 1)
    c1_w: np.ndarray  # (C, C), BN folded
    c1_b: np.ndarray  # (C, 1)
    c1_alpha: np.ndarray  # (C, 1)
    key_w: np.ndarray  # (C1, C2)
    key_b: np.ndarray  # (C1,)

    @classmethod
    def from_weights(cls, block: DprnnBlockWeights, sam: SamWeights) -> "_StreamBlock":
        dw_scale, dw_shift = _fold_bn(sam.conv0_dw_norm)
        pw_scale, pw_shift = _fold_bn(sam.conv0_pw_norm)
        c1_scale, c1_shift = _fold_bn(sam.conv1_norm)
        return cls(
            t_gamma=block.temporal.norm.gamma[:, None].copy(),
            t_beta=block.temporal.norm.beta[:, None].copy(),
            t_w_ih_T=np.ascontiguousarray(block.temporal.gru.w_ih.T),
            t_w_hh_T=np.ascontiguousarray(block.temporal.gru.w_hh.T),
            t_b_ih=block.temporal.gru.b_ih,
            t_b_hh=block.temporal.gru.b_hh,
            t_fc_wT=np.ascontiguousarray(block.temporal.fc.weight.T),
            t_fc_b=block.temporal.fc.bias,
            b_gamma=block.band.norm.gamma[:, None].copy(),
            b_beta=block.band.norm.beta[:, None].copy(),
            b_fwd=_StreamGru.from_weights(block.band.gru_fwd),
            b_bwd=(
                _StreamGru.from_weights(block.band.gru_bwd)
                if block.band.gru_bwd is not None
                else None
            ),
            b_fc_wT=np.ascontiguousarray(block.band.fc.weight.T),
            b_fc_b=block.band.fc.bias,
            dw_kernel=sam.conv0_dw * dw_scale[:, None, None],
            dw_shift=dw_shift[:, None].copy(),
            dw_alpha=sam.conv0_dw_alpha[:, None].copy(),
            pw_w=sam.conv0_pw.weight * pw_scale[:, None],
            pw_b=(sam.conv0_pw.bias * pw_scale + pw_shift)[:, None],
            pw_alpha=sam.conv0_pw_alpha[:, None].copy(),
            c1_w=sam.conv1.weight * c1_scale[:, None],
            c1_b=(sam.conv1.bias * c1_scale + c1_shift)[:, None],
            c1_alpha=sam.conv1_alpha[:, None].copy(),
            key_w=sam.fc.weight,
            key_b=sam.fc.bias,
        )


class _Timer:
    def __init__(self, timers: dict | None, key: str):
        self.timers = timers
        self.key = key

    def __enter__(self):
        if self.timers is not None:
            self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        if self.timers is not None:
            self.timers[self.key] = self.timers.get(self.key, 0.0) + time.perf_counter() - self.t0
        return False


class Engine:
    """An immutable model ready for offline or streaming enhancement.

    The engine and its weight store are safe to share across threads; each
    StreamState must be owned by a single caller.
    """

    def __init__(self, config: ModelConfig, store: WeightStore):
        config.validate()
        store.validate(config)
        self.config = config
        self.store = store
        self._window = sqrt_hann(config.fft_size)
        self._unpack(store)

    def _unpack(self, store: WeightStore) -> None:
        cfg = self.config
        n_bands = cfg.n_bands
        self.split_w = BandSplitWeights(
            norms=[_unpack_norm(store, f"split/band{j}/norm", True) for j in range(n_bands)],
            fcs=[_unpack_linear(store, f"split/band{j}/fc") for j in range(n_bands)],
        )
        self.merge_w = BandMergeWeights(
            norms=[_unpack_norm(store, f"merge/band{j}/norm", False) for j in range(n_bands)],
            fc1=[_unpack_linear(store, f"merge/band{j}/fc1") for j in range(n_bands)],
            fc2=[_unpack_linear(store, f"merge/band{j}/fc2") for j in range(n_bands)],
        )
        self.blocks: list[DprnnBlockWeights] = []
        self.sams: list[SamWeights] = []
        for i in range(cfg.n_blocks):
            temporal = TemporalWeights(
                norm=_unpack_norm(store, f"block{i}/temporal/norm", False),
                gru=_unpack_gru(store, f"block{i}/temporal/gru"),
                fc=_unpack_linear(store, f"block{i}/temporal/fc"),
            )
            band = BandWeights(
                norm=_unpack_norm(store, f"block{i}/band/norm", False),
                gru_fwd=_unpack_gru(store, f"block{i}/band/gru", "_fwd"),
                gru_bwd=(
                    _unpack_gru(store, f"block{i}/band/gru", "_bwd")
                    if cfg.band_bidirectional
                    else None
                ),
                fc=_unpack_linear(store, f"block{i}/band/fc"),
            )
            self.blocks.append(DprnnBlockWeights(temporal, band))
            self.sams.append(
                SamWeights(
                    fc=_unpack_linear(store, f"block{i}/sam/fc"),
                    conv0_dw=store[f"block{i}/sam/conv0_dw/kernel"],
                    conv0_dw_norm=_unpack_norm(store, f"block{i}/sam/conv0_dw/norm", True),
                    conv0_dw_alpha=store[f"block{i}/sam/conv0_dw/prelu/alpha"],
                    conv0_pw=_unpack_linear(store, f"block{i}/sam/conv0_pw"),
                    conv0_pw_norm=_unpack_norm(store, f"block{i}/sam/conv0_pw/norm", True),
                    conv0_pw_alpha=store[f"block{i}/sam/conv0_pw/prelu/alpha"],
                    conv1=_unpack_linear(store, f"block{i}/sam/conv1"),
                    conv1_norm=_unpack_norm(store, f"block{i}/sam/conv1/norm", True),
                    conv1_alpha=store[f"block{i}/sam/conv1/prelu/alpha"],
                )
            )
        self._precompute_stream()

    def _precompute_stream(self) -> None:
        """Derive the streaming fast-path tensors: contiguous transposed GRU
        weights, batch-norm affines folded into the SAM convolutions, and
        per-band merge weights stacked for batched matmul."""
        cfg = self.config
        self._merge_gamma = np.stack([n.gamma for n in self.merge_w.norms], axis=1)  # (N, K)
        self._merge_beta = np.stack([n.beta for n in self.merge_w.norms], axis=1)
        self._merge_w1 = np.ascontiguousarray(
            np.stack([l.weight for l in self.merge_w.fc1])
        )  # (K, mlp, N)
        self._merge_b1 = np.stack([l.bias for l in self.merge_w.fc1])  # (K, mlp)
        # Split statistics concatenated across bands match the interleaved
        # full-frame layout because bands partition the bins contiguously.
        sw = self.split_w
        self._split_mean = np.concatenate([n.mean for n in sw.norms])
        self._split_scale = np.concatenate(
            [n.gamma / np.sqrt(n.var + np.float32(1e-5)) for n in sw.norms]
        )
        self._split_beta = np.concatenate([n.beta for n in sw.norms])
        self._stream_blocks = [
            _StreamBlock.from_weights(block, sam) for block, sam in zip(self.blocks, self.sams)
        ]

    # -- validation helpers -------------------------------------------------

    def _check_embedding(self, e) -> np.ndarray:
        e = as_f32(e)
        if e.shape != (self.config.embed_dim,):
            raise DimensionError(
                f"embedding shape {e.shape} != ({self.config.embed_dim},)"
            )
        return e

    def _check_waveform(self, x: Waveform) -> None:
        if x.sample_rate != self.config.sample_rate:
            raise ConfigError(
                f"waveform rate {x.sample_rate} != engine rate {self.config.sample_rate}"
            )

    @property
    def latency_samples(self) -> int:
        return self.config.latency_samples

    # -- offline path --------------------------------------------------------

    def mask_for_spectrogram(self, x: ComplexSpectrogram, e) -> np.ndarray:
        """Run the full feature path and return the complex T x F mask."""
        e = self._check_embedding(e)
        h = bands_mod.band_split(x, self.config.scheme, self.split_w)
        for block, sam in zip(self.blocks, self.sams):
            h = dprnn_block(h, block)
            h = sam_forward(h, e, sam)
        return bands_mod.band_merge(h, self.config.scheme, self.merge_w)

    def enhance_offline(self, x: Waveform, e) -> Waveform:
        """Enhance a whole utterance at once; output length equals input length."""
        self._check_waveform(x)
        spec = stft(x, self.config.fft_size, self.config.hop)
        mask = self.mask_for_spectrogram(spec, e)
        y = istft(bands_mod.apply_mask(spec, mask))
        return Waveform(y.samples[: len(x.samples)], x.sample_rate)

    # -- streaming path -------------------------------------------------------

    def new_stream(self) -> StreamState:
        cfg = self.config
        return StreamState(
            temporal_h=[
                np.zeros((cfg.n_bands, cfg.gru_hidden), dtype=np.float32)
                for _ in range(cfg.n_blocks)
            ],
            conv_hist=[
                np.zeros((cfg.kt - 1, cfg.n_features, cfg.n_bands), dtype=np.float32)
                for _ in range(cfg.n_blocks)
            ],
            analysis_buf=np.zeros(cfg.latency_samples, dtype=np.float32),
            ola_tail=np.zeros(cfg.latency_samples, dtype=np.float32),
        )

    def stream_push(
        self, state: StreamState, chunk, e, timers: dict | None = None
    ) -> np.ndarray:
        """Consume exactly one hop of samples, emit one hop of enhanced audio.

        The emitted stream equals the offline output delayed by
        latency_samples; the first push therefore returns warm-up samples
        that offline processing discards. Previously emitted samples are
        never revised.
        """
        cfg = self.config
        chunk = as_f32(chunk)
        if chunk.shape != (cfg.hop,):
            raise UsageError(f"stream_push needs exactly {cfg.hop} samples, got {chunk.shape}")
        e = self._check_embedding(e)

        with _Timer(timers, "stft"):
            frame = np.concatenate([state.analysis_buf, chunk])
            state.analysis_buf = chunk.copy()
            spec_row = scipy.fft.rfft(frame * self._window).astype(np.complex64)

        with _Timer(timers, "split"):
            h = self._split_frame(spec_row)  # (N, K)

        for i, sb in enumerate(self._stream_blocks):
            with _Timer(timers, "temporal"):
                h = self._temporal_frame(h, sb, state, i)
            with _Timer(timers, "band"):
                h = self._band_frame(h, sb)
            with _Timer(timers, "sam"):
                h = self._sam_frame(h, e, sb, state, i)

        with _Timer(timers, "merge"):
            mask_row = self._merge_frame(h)  # (F,)

        with _Timer(timers, "istft"):
            synth = scipy.fft.irfft(mask_row * spec_row, n=cfg.fft_size).astype(np.float32)
            synth *= self._window
            emitted = state.ola_tail + synth[: cfg.hop]
            state.ola_tail = synth[cfg.hop :].copy()

        state.frames_done += 1
        return emitted

    def enhance_streaming(self, x: Waveform, e) -> Waveform:
        """Stream an utterance hop by hop; matches enhance_offline closely.

        The input is zero-padded to whole hops, one extra silent hop is
        pushed to flush the latency, and the emitted stream is re-aligned so
        the result has the same length and alignment as the offline path.
        """
        self._check_waveform(x)
        hop = self.config.hop
        n_chunks = max(1, math.ceil(len(x.samples) / hop))
        padded = np.zeros(n_chunks * hop, dtype=np.float32)
        padded[: len(x.samples)] = x.samples
        state = self.new_stream()
        outs = [
            self.stream_push(state, padded[i * hop : (i + 1) * hop], e)
            for i in range(n_chunks)
        ]
        outs.append(self.stream_push(state, np.zeros(hop, dtype=np.float32), e))
        y = np.concatenate(outs)[self.latency_samples : self.latency_samples + len(x.samples)]
        return Waveform(y, x.sample_rate)

    # -- per-frame helpers (streaming) ----------------------------------------

    def _split_frame(self, spec_row: np.ndarray) -> np.ndarray:
        cfg = self.config
        flat = np.empty(2 * cfg.n_bins, dtype=np.float32)
        flat[0::2] = spec_row.real
        flat[1::2] = spec_row.imag
        vn = (flat - self._split_mean) * self._split_scale + self._split_beta
        h = np.empty((cfg.n_features, cfg.n_bands), dtype=np.float32)
        for b, (lo, hi) in enumerate(cfg.scheme.edges()):
            fc = self.split_w.fcs[b]
            h[:, b] = fc.weight @ vn[2 * lo : 2 * hi] + fc.bias
        return h

    @staticmethod
    def _ln_frame(h: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """Layer norm over channels of one (N, K) frame, params as columns."""
        mu = h.mean(axis=0, keepdims=True)
        var = h.var(axis=0, keepdims=True)
        return (h - mu) / np.sqrt(var + np.float32(1e-5)) * gamma + beta

    def _temporal_frame(
        self, h: np.ndarray, sb: _StreamBlock, state: StreamState, i: int
    ) -> np.ndarray:
        xn = self._ln_frame(h, sb.t_gamma, sb.t_beta)  # (N, K)
        hidden = state.temporal_h[i].shape[1]
        gx = xn.T @ sb.t_w_ih_T + sb.t_b_ih  # (K, 3H)
        hp = state.temporal_h[i]
        gh = hp @ sb.t_w_hh_T + sb.t_b_hh
        rz = expit(gx[:, : 2 * hidden] + gh[:, : 2 * hidden])
        cand = np.tanh(gx[:, 2 * hidden :] + rz[:, :hidden] * gh[:, 2 * hidden :])
        z = rz[:, hidden:]
        hn = (1.0 - z) * cand + z * hp
        state.temporal_h[i] = hn
        return h + (hn @ sb.t_fc_wT + sb.t_fc_b).T

    def _band_frame(self, h: np.ndarray, sb: _StreamBlock) -> np.ndarray:
        xn = self._ln_frame(h, sb.b_gamma, sb.b_beta).T  # (K, N)
        bands = xn.shape[0]
        y = np.empty((bands, sb.b_fwd.hidden), dtype=np.float32)
        _gru_scan(xn @ sb.b_fwd.w_ih_T + sb.b_fwd.gx_bias, sb.b_fwd, False, y)
        if sb.b_bwd is not None:
            yb = np.empty_like(y)
            _gru_scan(xn @ sb.b_bwd.w_ih_T + sb.b_bwd.gx_bias, sb.b_bwd, True, yb)
            y = np.concatenate([y, yb], axis=-1)
        return h + (y @ sb.b_fc_wT + sb.b_fc_b).T

    def _sam_frame(
        self, h: np.ndarray, e: np.ndarray, sb: _StreamBlock, state: StreamState, i: int
    ) -> np.ndarray:
        cfg = self.config
        n, k, kt, kk = cfg.n_features, cfg.n_bands, cfg.kt, cfg.kk
        window = np.concatenate([state.conv_hist[i], h[None]], axis=0)  # (kt, N, K)
        if kt > 1:
            state.conv_hist[i] = window[1:].copy()

        half = (kk - 1) // 2
        pad = np.zeros((n, kt, k + kk - 1), dtype=np.float32)
        pad[:, :, half : half + k] = window.transpose(1, 0, 2)
        acc = np.zeros((n, k), dtype=np.float32)
        for it in range(kt):
            for j in range(kk):
                acc += sb.dw_kernel[:, it, j][:, None] * pad[:, it, j : j + k]
        acc += sb.dw_shift
        y = np.where(acc >= 0, acc, sb.dw_alpha * acc)

        q = sb.pw_w @ y + sb.pw_b  # (C1, K)
        q = np.where(q >= 0, q, sb.pw_alpha * q)

        key = e @ sb.key_w.T + sb.key_b  # (C1,)
        logits = key @ q  # (K,)
        z = logits / np.float32(math.sqrt(cfg.attn_channels * k / 2.0))
        z -= z.max()
        s = np.exp(z)
        s /= s.sum()

        scaled = h * s  # (N, K) * (K,)
        branch = sb.c1_w @ scaled + sb.c1_b
        branch = np.where(branch >= 0, branch, sb.c1_alpha * branch)
        return h + branch

    def _merge_frame(self, h: np.ndarray) -> np.ndarray:
        cfg = self.config
        xn = self._ln_frame(h, self._merge_gamma, self._merge_beta)
        xt = np.ascontiguousarray(xn.T)  # (K, N)
        hid = np.matmul(self._merge_w1, xt[:, :, None])[:, :, 0] + self._merge_b1
        np.tanh(hid, out=hid)  # (K, mlp)
        flat = np.empty(2 * cfg.n_bins, dtype=np.float32)
        for b, (lo, hi) in enumerate(cfg.scheme.edges()):
            fc2 = self.merge_w.fc2[b]
            flat[2 * lo : 2 * hi] = fc2.weight @ hid[b] + fc2.bias
        return (flat[0::2] + 1j * flat[1::2]).astype(np.complex64)

    def save(self, path) -> None:
        save_weights(self.store, self.config, path)


# -- counters -----------------------------------------------------------------


def count_params(config: ModelConfig) -> dict:
    """Closed-form parameter counts; must match the store walk exactly."""
    n, h, c1, c2 = config.n_features, config.gru_hidden, config.attn_channels, config.embed_dim
    mlp, kt, kk = config.mlp_hidden, config.kt, config.kk
    d = 2 if config.band_bidirectional else 1

    def gru_params(n_in: int) -> int:
        return 3 * h * n_in + 3 * h * h + 6 * h

    split = sum(4 * 2 * w + (n * 2 * w + n) for w in config.scheme.widths)
    merge = sum(
        2 * n + (mlp * n + mlp) + (2 * w * mlp + 2 * w) for w in config.scheme.widths
    )
    temporal = 2 * n + gru_params(n) + (n * h + n)
    band = 2 * n + d * gru_params(n) + (n * d * h + n)
    sam = (
        (c1 * c2 + c1)
        + (n * kt * kk + 4 * n + n)
        + (c1 * n + c1 + 4 * c1 + c1)
        + (n * n + n + 4 * n + n)
    )
    blocks = config.n_blocks * (temporal + band + sam)
    return {
        "split": split,
        "merge": merge,
        "temporal": config.n_blocks * temporal,
        "band": config.n_blocks * band,
        "sam": config.n_blocks * sam,
        "per_block": temporal + band + sam,
        "total": split + merge + blocks,
    }


def count_macs(config: ModelConfig, seconds: float = 1.0) -> dict:
    """Analytic multiply-accumulate counts for `seconds` of audio.

    Counts matmul/conv/GRU multiplies at 1/hop frames per second: GRU MACs
    are 3*H*(I+H) per step per direction, convolutions kernel-size MACs per
    output element, linear layers in*out. Each block's key projection
    (C1*C2) is counted once per second. Scales exactly linearly in seconds.
    """
    if seconds <= 0:
        raise ConfigError(f"seconds must be positive, got {seconds}")
    n, h, c1, c2 = config.n_features, config.gru_hidden, config.attn_channels, config.embed_dim
    mlp, kt, kk = config.mlp_hidden, config.kt, config.kk
    k = config.n_bands
    d = 2 if config.band_bidirectional else 1
    frames_per_s = config.sample_rate // config.hop

    gru_step_macs = 3 * h * (n + h)
    split = sum(2 * w * n for w in config.scheme.widths)  # per frame
    merge = k * (n * mlp) + sum(mlp * 2 * w for w in config.scheme.widths)
    temporal = k * gru_step_macs + k * h * n
    band = k * d * gru_step_macs + k * d * h * n
    sam = k * n * kt * kk + k * c1 * n + k * c1 + k * n * n
    per_frame = {
        "split": split,
        "merge": merge,
        "temporal": config.n_blocks * temporal,
        "band": config.n_blocks * band,
        "sam": config.n_blocks * sam,
    }
    per_second = {name: macs * frames_per_s for name, macs in per_frame.items()}
    per_second["sam"] += config.n_blocks * c1 * c2  # key projection, once per second
    total_per_second = sum(per_second.values())
    return {
        "per_second": per_second,
        "per_second_total": total_per_second,
        "seconds": seconds,
        "total": total_per_second * seconds,
    }


# -- weight file I/O ------------------------------------------------------------


def save_weights(store: WeightStore, config: ModelConfig, path) -> None:
    """Write a .pbw file (format described in the module docstring)."""
    metas = []
    blob = bytearray()
    for name, arr in store.items():
        if len(blob) % _ALIGN:
            blob.extend(b"\x00" * (_ALIGN - len(blob) % _ALIGN))
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        metas.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "f32le",
                "offset": len(blob),
                "nbytes": len(payload),
            }
        )
        blob.extend(payload)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config.to_json_dict(),
        "tensors": metas,
    }
    mbytes = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(mbytes)))
        f.write(mbytes)
        f.write(bytes(blob))


def load_weights(path) -> tuple[ModelConfig, WeightStore]:
    """Read a .pbw file back; bit-exact inverse of save_weights."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise WeightLoadError(f"{path}: not a weight file (bad magic)")
    (mlen,) = struct.unpack("<Q", data[4:12])
    if 12 + mlen > len(data):
        raise WeightLoadError(
            f"{path}: manifest length {mlen} exceeds file size {len(data)}"
        )
    try:
        manifest = json.loads(data[12 : 12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightLoadError(f"{path}: manifest is not valid JSON ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise WeightLoadError(
            f"{path}: unsupported format_version {manifest.get('format_version')}"
        )
    try:
        config = ModelConfig.from_json_dict(manifest["config"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise WeightLoadError(f"{path}: bad embedded config ({exc})") from exc

    blob = data[12 + mlen :]
    tensors: dict[str, np.ndarray] = {}
    for meta in manifest.get("tensors", []):
        name = meta.get("name", "<unnamed>")
        if meta.get("dtype") != "f32le":
            raise WeightLoadError(f"{path}: tensor {name!r} has unsupported dtype")
        shape = tuple(int(s) for s in meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        if meta["nbytes"] != 4 * count:
            raise WeightLoadError(
                f"{path}: tensor {name!r} nbytes {meta['nbytes']} != shape {shape} * 4"
            )
        start, end = int(meta["offset"]), int(meta["offset"]) + int(meta["nbytes"])
        if end > len(blob):
            raise WeightLoadError(
                f"{path}: tensor {name!r} extends past end of blob (truncated file?)"
            )
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(
            shape
        ).copy()
    store = WeightStore(tensors)
    try:
        store.validate(config)
    except WeightValidationError as exc:
        raise WeightLoadError(f"{path}: {exc}") from exc
    return config, store


def load_engine(path) -> Engine:
    config, store = load_weights(path)
    return Engine(config, store)


def replace_config(config: ModelConfig, **changes) -> ModelConfig:
    """dataclasses.replace with validation re-run."""
    return replace(config, **changes)
