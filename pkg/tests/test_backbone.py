import numpy as np
import pytest

from pse.backbone import BandWeights, DprnnBlockWeights, TemporalWeights, band_pass, dprnn_block, temporal_pass
from pse.errors import DimensionError
from pse.numerics import GruWeights, LayerNormParams, Linear, gru_sequence, layer_norm

N, H = 6, 4


def zero_gru(n_in, hidden):
    return GruWeights(
        np.zeros((3 * hidden, n_in), np.float32),
        np.zeros((3 * hidden, hidden), np.float32),
        np.zeros(3 * hidden, np.float32),
        np.zeros(3 * hidden, np.float32),
    )


def rand_gru(n_in, hidden, rng):
    return GruWeights(
        rng.uniform(-0.5, 0.5, (3 * hidden, n_in)).astype(np.float32),
        rng.uniform(-0.5, 0.5, (3 * hidden, hidden)).astype(np.float32),
        rng.uniform(-0.5, 0.5, 3 * hidden).astype(np.float32),
        rng.uniform(-0.5, 0.5, 3 * hidden).astype(np.float32),
    )


def make_temporal(zero=True, rng=None):
    norm = LayerNormParams(np.ones(N, np.float32), np.zeros(N, np.float32))
    if zero:
        return TemporalWeights(norm, zero_gru(N, H), Linear(np.zeros((N, H), np.float32), np.zeros(N, np.float32)))
    return TemporalWeights(
        norm,
        rand_gru(N, H, rng),
        Linear(rng.uniform(-0.5, 0.5, (N, H)).astype(np.float32), rng.uniform(-0.5, 0.5, N).astype(np.float32)),
    )


def make_band(zero=True, rng=None, bidirectional=True):
    norm = LayerNormParams(np.ones(N, np.float32), np.zeros(N, np.float32))
    d = 2 if bidirectional else 1
    if zero:
        return BandWeights(
            norm, zero_gru(N, H), zero_gru(N, H) if bidirectional else None,
            Linear(np.zeros((N, d * H), np.float32), np.zeros(N, np.float32)),
        )
    return BandWeights(
        norm,
        rand_gru(N, H, rng),
        rand_gru(N, H, rng) if bidirectional else None,
        Linear(rng.uniform(-0.5, 0.5, (N, d * H)).astype(np.float32), rng.uniform(-0.5, 0.5, N).astype(np.float32)),
    )


def rand_features(shape, seed):
    return np.random.default_rng(seed).uniform(-1, 1, shape).astype(np.float32)


# -- temporal pass ------------------------------------------------------------------


def test_temporal_zero_weights_is_identity():
    h = rand_features((2, N, 5, 3), 0)
    assert np.array_equal(temporal_pass(h, make_temporal(zero=True)), h)


def test_temporal_causality():
    rng = np.random.default_rng(1)
    w = make_temporal(zero=False, rng=rng)
    h = rand_features((1, N, 8, 3), 2)
    full = temporal_pass(h, w)
    cut = 5
    h2 = h.copy()
    h2[:, :, cut:, :] = 0.0
    trunc = temporal_pass(h2, w)
    assert np.max(np.abs(full[:, :, :cut, :] - trunc[:, :, :cut, :])) <= 1e-7


def test_temporal_single_band_matches_gru_composition():
    rng = np.random.default_rng(3)
    w = make_temporal(zero=False, rng=rng)
    h = rand_features((1, N, 7, 1), 4)
    out = temporal_pass(h, w)
    x = layer_norm(h[0, :, :, 0], w.norm.gamma, w.norm.beta, axis=0).T  # (T, N)
    y = gru_sequence(x, np.zeros(H, np.float32), w.gru)
    want = h[0, :, :, 0] + (y @ w.fc.weight.T + w.fc.bias).T
    assert np.max(np.abs(out[0, :, :, 0] - want)) <= 1e-6


# -- band pass -----------------------------------------------------------------------


def test_band_zero_weights_is_identity():
    h = rand_features((2, N, 4, 5), 5)
    assert np.array_equal(band_pass(h, make_band(zero=True)), h)


def test_band_pass_frame_locality():
    rng = np.random.default_rng(6)
    w = make_band(zero=False, rng=rng)
    h = rand_features((1, N, 4, 5), 7)
    base = band_pass(h, w)
    h2 = h.copy()
    h2[:, :, 2, :] += 1.0  # change frame 2 only
    out = band_pass(h2, w)
    others = [t for t in range(4) if t != 2]
    assert np.array_equal(base[:, :, others, :], out[:, :, others, :])
    assert not np.allclose(base[:, :, 2, :], out[:, :, 2, :])


def test_band_pass_t1_matches_bidirectional_oracle():
    rng = np.random.default_rng(8)
    w = make_band(zero=False, rng=rng, bidirectional=True)
    h = rand_features((1, N, 1, 5), 9)
    out = band_pass(h, w)
    x = layer_norm(h[0, :, 0, :], w.norm.gamma, w.norm.beta, axis=0).T  # (K, N)
    f = gru_sequence(x, np.zeros(H, np.float32), w.gru_fwd, "forward")
    b = gru_sequence(x, np.zeros(H, np.float32), w.gru_bwd, "backward")
    y = np.concatenate([f, b], axis=-1)
    want = h[0, :, 0, :] + (y @ w.fc.weight.T + w.fc.bias).T
    assert np.max(np.abs(out[0, :, 0, :] - want)) <= 1e-6


def test_band_pass_unidirectional_variant():
    rng = np.random.default_rng(10)
    w = make_band(zero=False, rng=rng, bidirectional=False)
    h = rand_features((1, N, 2, 5), 11)
    out = band_pass(h, w)
    x = layer_norm(h[0], w.norm.gamma, w.norm.beta, axis=0)
    want = h.copy()
    for t in range(2):
        y = gru_sequence(x[:, t, :].T, np.zeros(H, np.float32), w.gru_fwd)
        want[0, :, t, :] += (y @ w.fc.weight.T + w.fc.bias).T
    assert np.max(np.abs(out - want)) <= 1e-6


# -- full block -------------------------------------------------------------------------


def test_block_zero_weights_identity():
    h = rand_features((1, N, 4, 3), 12)
    blk = DprnnBlockWeights(make_temporal(zero=True), make_band(zero=True))
    assert np.array_equal(dprnn_block(h, blk), h)


def test_block_equals_manual_composition():
    rng = np.random.default_rng(13)
    blk = DprnnBlockWeights(make_temporal(zero=False, rng=rng), make_band(zero=False, rng=rng))
    h = rand_features((2, N, 5, 4), 14)
    assert np.array_equal(dprnn_block(h, blk), band_pass(temporal_pass(h, blk.temporal), blk.band))


def test_block_random_input_stays_finite():
    rng = np.random.default_rng(15)
    blk = DprnnBlockWeights(make_temporal(zero=False, rng=rng), make_band(zero=False, rng=rng))
    h = rand_features((2, N, 5, 4), 16) * 1e3
    out = dprnn_block(h, blk)
    assert np.all(np.isfinite(out))


def test_shape_validation():
    blk = DprnnBlockWeights(make_temporal(), make_band())
    with pytest.raises(DimensionError):
        temporal_pass(np.zeros((1, N + 1, 4, 3), np.float32), blk.temporal)
    with pytest.raises(DimensionError):
        band_pass(np.zeros((1, N, 4), np.float32), blk.band)
