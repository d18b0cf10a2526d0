"""Speaker-attentive feature rescaling.

The enrolled speaker's embedding acts as an attractor: a per-band attention
score is computed between the embedding (key) and a convolutional view of
the band features (query), normalized over bands, and used to rescale the
features before a residual pointwise projection.

Shapes follow the feature layout (B, C, T, K); the key is (B, T, C1, 1),
the query (B, T, K, C1), and the scores (B, T, K, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numerics import (
    BatchNormParams,
    Linear,
    as_f32,
    batch_norm_infer,
    conv2d_depthwise_causal,
    pointwise_conv,
    prelu,
    softmax,
)


@dataclass
class SamWeights:
    fc: Linear  # embedding C2 -> C1 (the key projection; no norm/activation)
    conv0_dw: np.ndarray  # (C, kt, kk) depthwise causal kernel
    conv0_dw_norm: BatchNormParams  # over C
    conv0_dw_alpha: np.ndarray  # (C,)
    conv0_pw: Linear  # pointwise C -> C1
    conv0_pw_norm: BatchNormParams  # over C1
    conv0_pw_alpha: np.ndarray  # (C1,)
    conv1: Linear  # pointwise C -> C (the rescale branch)
    conv1_norm: BatchNormParams  # over C
    conv1_alpha: np.ndarray  # (C,)

    @property
    def embed_dim(self) -> int:
        return self.fc.weight.shape[1]

    @property
    def attn_channels(self) -> int:
        return self.fc.weight.shape[0]


def _as_batched_embedding(e, embed_dim: int) -> np.ndarray:
    e = as_f32(e)
    if e.ndim == 1:
        e = e[None, :]
    if e.ndim != 2 or e.shape[1] != embed_dim:
        raise DimensionError(f"embedding shape {e.shape} incompatible with C2={embed_dim}")
    return e


def compute_key(e, w: SamWeights, n_frames: int) -> np.ndarray:
    """Project the embedding to C1 and replicate along time: (B, T, C1, 1).

    Replication is a broadcast view, so every time slice shares one buffer.
    """
    e = _as_batched_embedding(e, w.embed_dim)
    z = e @ w.fc.weight.T + w.fc.bias  # (B, C1)
    return np.broadcast_to(z[:, None, :, None], (e.shape[0], n_frames, z.shape[1], 1))


def _conv0(x: np.ndarray, w: SamWeights) -> np.ndarray:
    """Depth-separable query convolution on one batch item (C, T, K) -> (C1, T, K)."""
    d = w.conv0_dw_norm
    y = conv2d_depthwise_causal(x, w.conv0_dw)
    y = prelu(batch_norm_infer(y, d.mean, d.var, d.gamma, d.beta), w.conv0_dw_alpha)
    p = w.conv0_pw_norm
    y = pointwise_conv(y, w.conv0_pw.weight, w.conv0_pw.bias)
    return prelu(batch_norm_infer(y, p.mean, p.var, p.gamma, p.beta), w.conv0_pw_alpha)


def compute_query(h: np.ndarray, w: SamWeights) -> np.ndarray:
    """Causal convolutional view of the features, channels last: (B, T, K, C1)."""
    if h.ndim != 4 or h.shape[1] != w.conv0_dw.shape[0]:
        raise DimensionError(f"features {h.shape} incompatible with C={w.conv0_dw.shape[0]}")
    q = np.stack([_conv0(h[b], w) for b in range(h.shape[0])])  # (B, C1, T, K)
    return q.transpose(0, 2, 3, 1)


def attention_scores(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Score each band against the key and normalize over bands: (B, T, K, 1).

    logits[b,t,k] = sum_c q[b,t,k,c] * k[b,t,c,0], softmaxed over the band
    axis after division by sqrt(C1 * K / 2).
    """
    if q.ndim != 4 or k.ndim != 4 or q.shape[:2] != k.shape[:2] or q.shape[3] != k.shape[2]:
        raise DimensionError(f"query {q.shape} and key {k.shape} do not align")
    c1, bands = q.shape[3], q.shape[2]
    logits = np.einsum("btkc,btc->btk", q, k[..., 0], dtype=np.float32)
    s = softmax(logits, scale=float(np.sqrt(c1 * bands / 2.0)), axis=-1)
    return s[..., None]


def sam_forward(h: np.ndarray, e, w: SamWeights) -> np.ndarray:
    """Rescale features by their speaker-attention scores, with a residual.

    h_o = conv1(s * h) + h, returned in the (B, C, T, K) layout. With the
    conv1 branch zeroed out this is exactly the identity. A single embedding
    vector is shared across the whole batch.
    """
    e = _as_batched_embedding(e, w.embed_dim)
    if e.shape[0] == 1 and h.shape[0] > 1:
        e = np.broadcast_to(e, (h.shape[0], e.shape[1]))
    elif e.shape[0] != h.shape[0]:
        raise DimensionError(f"embedding batch {e.shape[0]} != feature batch {h.shape[0]}")
    q = compute_query(h, w)
    k = compute_key(e, w, h.shape[2])
    s = attention_scores(q, k)  # (B, T, K, 1)
    scaled = h * s[..., 0][:, None, :, :]  # scores broadcast along channels
    n = w.conv1_norm
    out = h.copy()
    for b in range(h.shape[0]):
        y = pointwise_conv(scaled[b], w.conv1.weight, w.conv1.bias)
        out[b] += prelu(batch_norm_infer(y, n.mean, n.var, n.gamma, n.beta), w.conv1_alpha)
    return out
