"""Dual-path band-and-sequence modeling blocks.

Each block first runs a causal GRU along time independently per band, then a
GRU along the band axis independently per frame (optionally bidirectional).
Both halves are residual: layer-norm -> GRU -> linear -> add input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numerics import (
    GruWeights,
    LayerNormParams,
    Linear,
    apply_linear,
    gru_sequence,
    layer_norm,
)


@dataclass
class TemporalWeights:
    norm: LayerNormParams
    gru: GruWeights  # in N, hidden H, forward only (strictly causal)
    fc: Linear  # H -> N


@dataclass
class BandWeights:
    norm: LayerNormParams
    gru_fwd: GruWeights  # in N, hidden H
    gru_bwd: GruWeights | None  # present when bidirectional
    fc: Linear  # H -> N, or 2H -> N when bidirectional (fwd features first)


@dataclass
class DprnnBlockWeights:
    temporal: TemporalWeights
    band: BandWeights


def _check_features(h: np.ndarray, n_features: int) -> None:
    if h.ndim != 4 or h.shape[1] != n_features:
        raise DimensionError(f"expected (B, {n_features}, T, K) features, got {h.shape}")


def temporal_pass(h: np.ndarray, w: TemporalWeights) -> np.ndarray:
    """Causal per-band sequence modeling: out at frame t depends on frames <= t."""
    _check_features(h, w.norm.gamma.shape[0])
    hidden = w.gru.hidden
    x = layer_norm(h, w.norm.gamma, w.norm.beta, axis=1)
    out = h.copy()
    h0 = np.zeros(hidden, dtype=np.float32)
    for b in range(h.shape[0]):
        seq = np.ascontiguousarray(x[b].transpose(1, 2, 0))  # (T, K, N)
        y = gru_sequence(seq, h0, w.gru, "forward")  # (T, K, H)
        out[b] += apply_linear(y, w.fc).transpose(2, 0, 1)
    return out


def band_pass(h: np.ndarray, w: BandWeights) -> np.ndarray:
    """Per-frame modeling across the band axis; frame-local, so causality holds."""
    _check_features(h, w.norm.gamma.shape[0])
    hidden = w.gru_fwd.hidden
    x = layer_norm(h, w.norm.gamma, w.norm.beta, axis=1)
    out = h.copy()
    h0 = np.zeros(hidden, dtype=np.float32)
    for b in range(h.shape[0]):
        seq = np.ascontiguousarray(x[b].transpose(2, 1, 0))  # (K, T, N)
        y = gru_sequence(seq, h0, w.gru_fwd, "forward")  # (K, T, H)
        if w.gru_bwd is not None:
            y = np.concatenate([y, gru_sequence(seq, h0, w.gru_bwd, "backward")], axis=-1)
        out[b] += apply_linear(y, w.fc).transpose(2, 1, 0)
    return out


def dprnn_block(h: np.ndarray, w: DprnnBlockWeights) -> np.ndarray:
    """One dual-path block: temporal pass, then band pass."""
    return band_pass(temporal_pass(h, w.temporal), w.band)
