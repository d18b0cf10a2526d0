import math

import numpy as np
import pytest

from pse.errors import ConfigError, DimensionError, NumericError, WeightValidationError
from pse.numerics import (
    GruWeights,
    SeededRng,
    batch_norm_infer,
    conv2d_depthwise_causal,
    glorot_bound,
    gru_sequence,
    init_uniform,
    matmul,
    pointwise_conv,
    prelu,
    softmax,
)


# -- SplitMix64 -----------------------------------------------------------------


def test_rng_same_seed_same_stream():
    a = [SeededRng(99).next_u64() for _ in range(5)]
    b = [SeededRng(99).next_u64() for _ in range(5)]
    assert a == b


def test_rng_scalar_and_vector_paths_agree():
    r1 = SeededRng(7)
    scalars = [r1.u01() for _ in range(100)]
    r2 = SeededRng(7)
    assert np.allclose(r2.u01_array(100), scalars, atol=0)


def test_rng_vector_then_scalar_continues_stream():
    r1 = SeededRng(5)
    r1.u01_array(10)
    tail = r1.u01()
    r2 = SeededRng(5)
    ref = [r2.u01() for _ in range(11)][-1]
    assert tail == ref


def test_rng_spawn_independent_and_deterministic():
    assert SeededRng(1).spawn(3).next_u64() == SeededRng(1).spawn(3).next_u64()
    assert SeededRng(1).spawn(3).next_u64() != SeededRng(1).spawn(4).next_u64()


# -- matmul ----------------------------------------------------------------------


def test_matmul_identity():
    a = np.arange(9, dtype=np.float32).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3, dtype=np.float32), a), a)


def test_matmul_scalar_case():
    assert float(matmul([[2.0]], [[3.0]])[0, 0]) == pytest.approx(6.0)


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, (7, 5)).astype(np.float32)
    b = rng.uniform(-1, 1, (5, 3)).astype(np.float32)
    want = np.zeros((7, 3))
    for i in range(7):
        for j in range(3):
            for k in range(5):
                want[i, j] += float(a[i, k]) * float(b[k, j])
    assert np.max(np.abs(matmul(a, b) - want)) <= 1e-6


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_matmul_associativity():
    rng = np.random.default_rng(1)
    a, b, c = (rng.uniform(-1, 1, (6, 6)).astype(np.float32) for _ in range(3))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert np.max(np.abs(left - right)) <= 1e-4


# -- softmax ----------------------------------------------------------------------


def test_softmax_uniform_on_equal_logits():
    assert softmax(np.zeros(3), 1.0) == pytest.approx([1 / 3] * 3, abs=1e-7)


def test_softmax_closed_form():
    out = softmax(np.array([math.log(2.0), 0.0]), 1.0)
    assert out == pytest.approx([2 / 3, 1 / 3], abs=1e-6)


def test_softmax_normalization_and_permutation_equivariance():
    rng = np.random.default_rng(2)
    x = rng.uniform(-5, 5, 41).astype(np.float32)
    out = softmax(x, 2.5)
    assert abs(float(out.sum()) - 1.0) <= 1e-6
    assert np.all(out > 0) and np.all(out <= 1)
    perm = rng.permutation(41)
    assert np.allclose(softmax(x[perm], 2.5), out[perm], atol=1e-7)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(3)
    x = rng.uniform(-3, 3, 17).astype(np.float32)
    assert np.max(np.abs(softmax(x + 7.5, 1.0) - softmax(x, 1.0))) <= 1e-6


def test_softmax_rejects_nonfinite_and_bad_scale():
    with pytest.raises(NumericError):
        softmax(np.array([1.0, np.nan]), 1.0)
    with pytest.raises(ConfigError):
        softmax(np.zeros(3), 0.0)


# -- GRU ---------------------------------------------------------------------------


def make_gru(n_in: int, hidden: int, seed: int | None = None) -> GruWeights:
    if seed is None:
        z = np.zeros
        return GruWeights(z((3 * hidden, n_in), np.float32), z((3 * hidden, hidden), np.float32),
                          z(3 * hidden, np.float32), z(3 * hidden, np.float32))
    rng = np.random.default_rng(seed)
    return GruWeights(
        rng.uniform(-0.5, 0.5, (3 * hidden, n_in)).astype(np.float32),
        rng.uniform(-0.5, 0.5, (3 * hidden, hidden)).astype(np.float32),
        rng.uniform(-0.5, 0.5, 3 * hidden).astype(np.float32),
        rng.uniform(-0.5, 0.5, 3 * hidden).astype(np.float32),
    )


def scalar_gru_oracle(x, h0, w: GruWeights):
    """Per-gate scalar re-implementation in float64."""
    hidden = w.hidden
    h = [float(v) for v in h0]
    out = []
    for t in range(x.shape[0]):
        gx = [sum(float(w.w_ih[g, i]) * float(x[t, i]) for i in range(x.shape[1])) + float(w.b_ih[g])
              for g in range(3 * hidden)]
        gh = [sum(float(w.w_hh[g, j]) * h[j] for j in range(hidden)) + float(w.b_hh[g])
              for g in range(3 * hidden)]
        new = []
        for i in range(hidden):
            r = 1.0 / (1.0 + math.exp(-(gx[i] + gh[i])))
            z = 1.0 / (1.0 + math.exp(-(gx[hidden + i] + gh[hidden + i])))
            n = math.tanh(gx[2 * hidden + i] + r * gh[2 * hidden + i])
            new.append((1.0 - z) * n + z * h[i])
        h = new
        out.append(list(h))
    return np.array(out)


def test_gru_zero_weights_halves_initial_state():
    w = make_gru(3, 4)
    x = np.ones((1, 3), dtype=np.float32)
    out = gru_sequence(x, np.ones(4, dtype=np.float32), w)
    assert out == pytest.approx(0.5 * np.ones((1, 4)), abs=1e-7)


def test_gru_t1_matches_oracle_single_cell():
    w = make_gru(3, 4, seed=5)
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, (1, 3)).astype(np.float32)
    h0 = rng.uniform(-1, 1, 4).astype(np.float32)
    assert np.max(np.abs(gru_sequence(x, h0, w) - scalar_gru_oracle(x, h0, w))) <= 1e-6


def test_gru_sequence_matches_scalar_oracle():
    w = make_gru(3, 4, seed=7)
    rng = np.random.default_rng(8)
    x = rng.uniform(-1, 1, (5, 3)).astype(np.float32)
    h0 = np.zeros(4, dtype=np.float32)
    assert np.max(np.abs(gru_sequence(x, h0, w) - scalar_gru_oracle(x, h0, w))) <= 1e-6


def test_gru_backward_is_reversed_forward():
    w = make_gru(3, 4, seed=9)
    rng = np.random.default_rng(10)
    x = rng.uniform(-1, 1, (6, 3)).astype(np.float32)
    h0 = np.zeros(4, dtype=np.float32)
    fwd_rev = gru_sequence(x[::-1].copy(), h0, w, "forward")[::-1]
    bwd = gru_sequence(x, h0, w, "backward")
    assert np.max(np.abs(fwd_rev - bwd)) <= 1e-6


def test_gru_shape_and_direction_errors():
    w = make_gru(3, 4)
    with pytest.raises(DimensionError):
        gru_sequence(np.zeros((5, 2), dtype=np.float32), np.zeros(4), w)
    with pytest.raises(ConfigError):
        gru_sequence(np.zeros((5, 3), dtype=np.float32), np.zeros(4), w, "sideways")


# -- causal depthwise conv ----------------------------------------------------------


def test_conv_delta_kernel_is_identity():
    rng = np.random.default_rng(11)
    x = rng.uniform(-1, 1, (2, 6, 5)).astype(np.float32)
    kernel = np.zeros((2, 3, 3), dtype=np.float32)
    kernel[:, -1, 1] = 1.0  # most recent frame, center band
    assert np.allclose(conv2d_depthwise_causal(x, kernel), x, atol=0)


def test_conv_impulse_lands_at_later_frames_only():
    kernel = np.arange(9, dtype=np.float32).reshape(1, 3, 3) + 1.0
    x = np.zeros((1, 7, 5), dtype=np.float32)
    t0, k0 = 3, 2
    x[0, t0, k0] = 1.0
    out = conv2d_depthwise_causal(x, kernel)
    # direct summation oracle
    want = np.zeros_like(x)
    for i in range(3):
        for j in range(3):
            t = t0 + (2 - i)
            k = k0 + (1 - j)
            if 0 <= t < 7 and 0 <= k < 5:
                want[0, t, k] += kernel[0, i, j]
    assert np.allclose(out, want, atol=1e-7)
    assert np.all(out[0, :t0, :] == 0.0)


def test_conv_causality_bit_exact():
    rng = np.random.default_rng(12)
    x = rng.uniform(-1, 1, (3, 8, 4)).astype(np.float32)
    kernel = rng.uniform(-1, 1, (3, 2, 3)).astype(np.float32)
    full = conv2d_depthwise_causal(x, kernel)
    cut = 5
    x2 = x.copy()
    x2[:, cut:, :] = 0.0
    trunc = conv2d_depthwise_causal(x2, kernel)
    assert np.array_equal(full[:, :cut, :], trunc[:, :cut, :])


def test_conv_rejects_even_band_kernel():
    with pytest.raises(ConfigError):
        conv2d_depthwise_causal(np.zeros((1, 4, 4), np.float32), np.zeros((1, 3, 2), np.float32))


# -- pointwise conv -------------------------------------------------------------------


def test_pointwise_identity_and_zero():
    rng = np.random.default_rng(13)
    x = rng.uniform(-1, 1, (3, 4, 5)).astype(np.float32)
    out = pointwise_conv(x, np.eye(3, dtype=np.float32), np.zeros(3, np.float32))
    assert np.array_equal(out, x)
    out = pointwise_conv(x, np.zeros((2, 3), np.float32), np.zeros(2, np.float32))
    assert np.all(out == 0.0)


def test_pointwise_matches_matmul_on_flattened_axes():
    rng = np.random.default_rng(14)
    x = rng.uniform(-1, 1, (3, 4, 5)).astype(np.float32)
    w = rng.uniform(-1, 1, (2, 3)).astype(np.float32)
    b = rng.uniform(-1, 1, 2).astype(np.float32)
    want = (matmul(w, x.reshape(3, 20)) + b[:, None]).reshape(2, 4, 5)
    assert np.max(np.abs(pointwise_conv(x, w, b) - want)) <= 1e-6


# -- batch norm (inference) -------------------------------------------------------------


def test_batch_norm_identity_params():
    rng = np.random.default_rng(15)
    x = rng.uniform(-1, 1, (3, 4, 2)).astype(np.float32)
    out = batch_norm_infer(x, np.zeros(3), np.ones(3), np.ones(3), np.zeros(3), eps=0.0)
    assert np.array_equal(out, x)


def test_batch_norm_gamma_zero_gives_beta():
    x = np.random.default_rng(16).uniform(-1, 1, (2, 5)).astype(np.float32)
    beta = np.array([1.5, -2.0], dtype=np.float32)
    out = batch_norm_infer(x, np.zeros(2), np.ones(2), np.zeros(2), beta)
    assert np.allclose(out, beta[:, None], atol=0)


def test_batch_norm_matches_scalar_formula():
    rng = np.random.default_rng(17)
    x = rng.uniform(-2, 2, (4, 3)).astype(np.float32)
    mean, gamma, beta = (rng.uniform(-1, 1, 4).astype(np.float32) for _ in range(3))
    var = rng.uniform(0.1, 2.0, 4).astype(np.float32)
    out = batch_norm_infer(x, mean, var, gamma, beta, eps=1e-5)
    for c in range(4):
        for t in range(3):
            want = (float(x[c, t]) - float(mean[c])) / math.sqrt(float(var[c]) + 1e-5)
            want = want * float(gamma[c]) + float(beta[c])
            assert abs(float(out[c, t]) - want) <= 1e-6


def test_batch_norm_rejects_negative_variance():
    with pytest.raises(WeightValidationError):
        batch_norm_infer(np.zeros((2, 2)), np.zeros(2), np.array([-0.1, 1.0]), np.ones(2), np.zeros(2))


# -- prelu ---------------------------------------------------------------------------------


def test_prelu_positive_input_identity():
    x = np.abs(np.random.default_rng(18).uniform(0, 2, (3, 4))).astype(np.float32)
    assert np.array_equal(prelu(x, np.full(3, 0.3)), x)


def test_prelu_alpha_one_identity():
    x = np.random.default_rng(19).uniform(-2, 2, (3, 4)).astype(np.float32)
    assert np.array_equal(prelu(x, np.ones(3)), x)


def test_prelu_alpha_zero_is_relu():
    x = np.random.default_rng(20).uniform(-2, 2, (3, 4)).astype(np.float32)
    assert np.array_equal(prelu(x, np.zeros(3)), np.maximum(x, 0.0))


# -- init ---------------------------------------------------------------------------------


def test_init_uniform_deterministic():
    a = init_uniform(SeededRng(21), (4, 5), 5, 4)
    b = init_uniform(SeededRng(21), (4, 5), 5, 4)
    assert np.array_equal(a, b)


def test_init_uniform_within_glorot_bound():
    arr = init_uniform(SeededRng(22), (100, 100), 100, 100)
    a = glorot_bound(100, 100)
    assert np.all(arr >= -a) and np.all(arr <= a)


def test_init_uniform_empirical_mean_near_zero():
    arr = init_uniform(SeededRng(23), (100000,), 50, 50)
    a = glorot_bound(50, 50)
    assert abs(float(arr.mean())) <= 0.01 * a


# -- finiteness fuzz ------------------------------------------------------------------------


def test_kernels_map_finite_to_finite():
    rng = np.random.default_rng(24)
    big = rng.uniform(-1e3, 1e3, (4, 6, 5)).astype(np.float32)
    assert np.all(np.isfinite(softmax(big[0, 0], 3.0)))
    assert np.all(np.isfinite(conv2d_depthwise_causal(big, rng.uniform(-1e3, 1e3, (4, 3, 3)).astype(np.float32))))
    assert np.all(np.isfinite(pointwise_conv(big, rng.uniform(-1e3, 1e3, (2, 4)).astype(np.float32), np.zeros(2, np.float32))))
    w = make_gru(5, 4, seed=25)
    out = gru_sequence(big[0], np.zeros(4, np.float32), w)
    assert np.all(np.isfinite(out))
    assert np.all(np.isfinite(batch_norm_infer(big, np.zeros(4), np.ones(4), np.ones(4), np.zeros(4))))
