import numpy as np
import pytest

from pse import BandScheme, ComplexSpectrogram, apply_mask, band_merge, band_split, default_scheme
from pse.bands import BandMergeWeights, BandSplitWeights, deinterleave, interleave
from pse.errors import ConfigError, DimensionError, WeightValidationError
from pse.numerics import BatchNormParams, LayerNormParams, Linear, layer_norm, matmul


def make_split_weights(scheme, n_features, seed=None):
    rng = np.random.default_rng(seed)
    norms, fcs = [], []
    for w in scheme.widths:
        if seed is None:
            norms.append(BatchNormParams(np.zeros(2 * w, np.float32), np.ones(2 * w, np.float32),
                                         np.ones(2 * w, np.float32), np.zeros(2 * w, np.float32)))
            fcs.append(Linear(np.zeros((n_features, 2 * w), np.float32), np.zeros(n_features, np.float32)))
        else:
            norms.append(BatchNormParams(
                rng.uniform(-0.2, 0.2, 2 * w).astype(np.float32),
                rng.uniform(0.5, 1.5, 2 * w).astype(np.float32),
                rng.uniform(0.5, 1.5, 2 * w).astype(np.float32),
                rng.uniform(-0.2, 0.2, 2 * w).astype(np.float32),
            ))
            fcs.append(Linear(rng.uniform(-1, 1, (n_features, 2 * w)).astype(np.float32),
                              rng.uniform(-1, 1, n_features).astype(np.float32)))
    return BandSplitWeights(norms, fcs)


def make_merge_weights(scheme, n_features, hidden, seed=None):
    rng = np.random.default_rng(seed)
    norms, fc1, fc2 = [], [], []
    for w in scheme.widths:
        if seed is None:
            norms.append(LayerNormParams(np.ones(n_features, np.float32), np.zeros(n_features, np.float32)))
            fc1.append(Linear(np.zeros((hidden, n_features), np.float32), np.zeros(hidden, np.float32)))
            fc2.append(Linear(np.zeros((2 * w, hidden), np.float32), np.zeros(2 * w, np.float32)))
        else:
            norms.append(LayerNormParams(rng.uniform(0.5, 1.5, n_features).astype(np.float32),
                                         rng.uniform(-0.2, 0.2, n_features).astype(np.float32)))
            fc1.append(Linear(rng.uniform(-1, 1, (hidden, n_features)).astype(np.float32),
                              rng.uniform(-1, 1, hidden).astype(np.float32)))
            fc2.append(Linear(rng.uniform(-1, 1, (2 * w, hidden)).astype(np.float32),
                              rng.uniform(-1, 1, 2 * w).astype(np.float32)))
    return BandMergeWeights(norms, fc1, fc2)


def rand_spec(frames, bins, seed, sr=16000, fft=320):
    rng = np.random.default_rng(seed)
    data = (rng.standard_normal((frames, bins)) + 1j * rng.standard_normal((frames, bins)))
    return ComplexSpectrogram(data.astype(np.complex64), sr, fft, fft // 2)


# -- schemes -------------------------------------------------------------------


def test_default_scheme_48k():
    s = default_scheme(48000, 960)
    assert s.n_bands == 41
    assert s.total_bins == 481
    assert s.widths[:20] == (2,) * 20
    assert s.widths[-2:] == (20, 21)


def test_default_scheme_16k():
    s = default_scheme(16000, 320)
    assert s.n_bands == 41
    assert s.total_bins == 161


def test_scheme_partition_covers_every_bin_once():
    for sr, fft in ((48000, 960), (16000, 320)):
        s = default_scheme(sr, fft)
        seen = []
        for lo, hi in s.edges():
            seen.extend(range(lo, hi))
        assert seen == list(range(fft // 2 + 1))


def test_default_scheme_unsupported_rate():
    with pytest.raises(ConfigError):
        default_scheme(44100, 882)
    with pytest.raises(ConfigError):
        default_scheme(48000, 512)


def test_scheme_rejects_empty_or_nonpositive():
    with pytest.raises(ConfigError):
        BandScheme(())
    with pytest.raises(ConfigError):
        BandScheme((3, 0, 2))


# -- band split ------------------------------------------------------------------


def test_band_split_zero_input_zero_biases():
    scheme = BandScheme((2, 3))
    x = ComplexSpectrogram(np.zeros((4, 5), np.complex64), 16000, 8, 4)
    w = make_split_weights(scheme, 6)
    assert np.all(band_split(x, scheme, w) == 0.0)


def test_band_split_single_band_is_linear_layer():
    scheme = BandScheme((5,))
    x = rand_spec(3, 5, seed=1, fft=8)
    w = make_split_weights(scheme, 4, seed=2)
    out = band_split(x, scheme, w)
    assert out.shape == (1, 4, 3, 1)
    v = interleave(x.data)  # (T, 2w)
    norm = w.norms[0]
    vn = (v - norm.mean) / np.sqrt(norm.var + np.float32(1e-5)) * norm.gamma + norm.beta
    want = matmul(w.fcs[0].weight, vn.T.astype(np.float32)) + w.fcs[0].bias[:, None]
    assert np.max(np.abs(out[0, :, :, 0] - want)) <= 1e-5


def test_band_split_locality():
    scheme = BandScheme((2, 3))
    x = rand_spec(4, 5, seed=3, fft=8)
    w = make_split_weights(scheme, 6, seed=4)
    base = band_split(x, scheme, w)
    x2 = ComplexSpectrogram(x.data.copy(), x.sample_rate, x.fft_size, x.hop)
    x2.data[:, 2:] += 1.0 + 2.0j  # perturb band 1 only
    out = band_split(x2, scheme, w)
    assert np.array_equal(base[0, :, :, 0], out[0, :, :, 0])
    assert not np.allclose(base[0, :, :, 1], out[0, :, :, 1])


def test_band_split_scheme_mismatch():
    scheme = BandScheme((2, 2))
    x = rand_spec(3, 5, seed=5, fft=8)
    w = make_split_weights(scheme, 6, seed=6)
    with pytest.raises(WeightValidationError):
        band_split(x, scheme, w)


def test_interleave_round_trip():
    rng = np.random.default_rng(7)
    z = (rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))).astype(np.complex64)
    assert np.array_equal(deinterleave(interleave(z)), z)


# -- band merge -------------------------------------------------------------------


def test_band_merge_zero_weights_zero_mask():
    scheme = BandScheme((2, 3))
    h = np.random.default_rng(8).standard_normal((1, 6, 4, 2)).astype(np.float32)
    w = make_merge_weights(scheme, 6, 10)
    assert np.all(band_merge(h, scheme, w) == 0.0)


def test_band_merge_bias_only_unit_mask():
    scheme = BandScheme((2, 3))
    h = np.random.default_rng(9).standard_normal((1, 6, 4, 2)).astype(np.float32)
    w = make_merge_weights(scheme, 6, 10)
    for b, width in enumerate(scheme.widths):
        bias = np.zeros(2 * width, np.float32)
        bias[0::2] = 1.0
        w.fc2[b] = Linear(np.zeros((2 * width, 10), np.float32), bias)
    mask = band_merge(h, scheme, w)
    assert np.allclose(mask, 1.0 + 0.0j, atol=0)


def test_band_merge_matches_scalar_mlp_oracle():
    scheme = BandScheme((2, 3))
    rng = np.random.default_rng(10)
    h = rng.standard_normal((1, 6, 4, 2)).astype(np.float32)
    w = make_merge_weights(scheme, 6, 10, seed=11)
    mask = band_merge(h, scheme, w)
    for b, (lo, hi) in enumerate(scheme.edges()):
        xb = h[0, :, :, b]
        xn = layer_norm(xb, w.norms[b].gamma, w.norms[b].beta, axis=0).astype(np.float64)
        hid = np.tanh(w.fc1[b].weight.astype(np.float64) @ xn + w.fc1[b].bias[:, None])
        flat = w.fc2[b].weight.astype(np.float64) @ hid + w.fc2[b].bias[:, None]  # (2w, T)
        want = (flat[0::2, :] + 1j * flat[1::2, :]).T
        assert np.max(np.abs(mask[:, lo:hi] - want)) <= 1e-6


def test_band_merge_shape_errors():
    scheme = BandScheme((2, 3))
    w = make_merge_weights(scheme, 6, 10)
    with pytest.raises(DimensionError):
        band_merge(np.zeros((1, 6, 4, 3), np.float32), scheme, w)
    with pytest.raises(WeightValidationError):
        band_merge(np.zeros((1, 7, 4, 2), np.float32), scheme, w)


# -- mask application ---------------------------------------------------------------


def test_apply_mask_unit_zero_rotation():
    x = rand_spec(4, 5, seed=12, fft=8)
    unit = np.ones((4, 5), np.complex64)
    assert np.array_equal(apply_mask(x, unit).data, x.data)
    assert np.all(apply_mask(x, np.zeros((4, 5), np.complex64)).data == 0)
    rot = apply_mask(x, np.full((4, 5), 1j, np.complex64))
    assert np.allclose(np.abs(rot.data), np.abs(x.data), atol=1e-6)
    nz = np.abs(x.data) > 1e-6
    dphi = np.angle(rot.data[nz]) - np.angle(x.data[nz])
    dphi = (dphi + np.pi) % (2 * np.pi) - np.pi
    assert np.allclose(np.abs(dphi), np.pi / 2, atol=1e-5)


def test_apply_mask_shape_mismatch():
    x = rand_spec(4, 5, seed=13, fft=8)
    with pytest.raises(DimensionError):
        apply_mask(x, np.ones((4, 4), np.complex64))
