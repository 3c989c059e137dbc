import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swiftattn import nnops, oracles
from swiftattn.nnops import BatchNormParams, Conv2dParams
from swiftattn.tensor import DimensionError


def random_bn(r, C, dtype=np.float64):
    return BatchNormParams(r.uniform(0.5, 1.5, C).astype(dtype), r.uniform(-0.3, 0.3, C).astype(dtype),
                           r.uniform(-0.3, 0.3, C).astype(dtype), r.uniform(0.2, 2.0, C).astype(dtype))


@pytest.mark.parametrize("method", ["direct", "im2col"])
def test_conv_counting_overlaps(method):
    p = Conv2dParams(np.ones((1, 1, 3, 3)), padding=1)
    out = nnops.conv2d(np.ones((1, 3, 3)), p, method)
    assert out[0, 1, 1] == 9
    assert out[0, 0, 0] == out[0, 0, 2] == out[0, 2, 0] == out[0, 2, 2] == 4


@pytest.mark.parametrize("method", ["direct", "im2col"])
def test_conv_identity_pointwise(method, rng):
    x = rng.standard_normal((3, 4, 5))
    p = Conv2dParams(np.eye(3)[:, :, None, None])
    np.testing.assert_array_equal(nnops.conv2d(x, p, method), x)


@pytest.mark.parametrize("method", ["direct", "im2col"])
def test_depthwise_stride2_vs_loop(method, rng):
    x = rng.standard_normal((4, 8, 8))
    p = Conv2dParams(rng.standard_normal((4, 1, 3, 3)), rng.standard_normal(4), stride=2, padding=1, groups=4)
    ref = oracles.conv2d(x, p.weight, p.bias, 2, 1, 4)
    assert nnops.conv2d(x, p, method).shape == (4, 4, 4)
    assert np.max(np.abs(nnops.conv2d(x, p, method) - ref)) < 1e-10


conv_cases = st.tuples(
    st.integers(1, 4),  # in channels per group
    st.integers(1, 3),  # out channels per group
    st.integers(1, 3),  # groups
    st.sampled_from([1, 3]),
    st.integers(1, 2),
    st.integers(3, 8),
    st.integers(3, 8),
    st.integers(0, 2**32 - 1),
)


@given(conv_cases)
def test_conv_paths_match_loop_oracle(case):
    cig, cog, g, k, s, H, W, seed = case
    r = np.random.default_rng(seed)
    x = r.standard_normal((cig * g, H, W))
    p = Conv2dParams(r.standard_normal((cog * g, cig, k, k)), r.standard_normal(cog * g),
                     stride=s, padding=k // 2, groups=g)
    ref = oracles.conv2d(x, p.weight, p.bias, s, k // 2, g)
    assert np.max(np.abs(nnops.conv2d(x, p, "direct") - ref)) < 1e-10
    assert np.max(np.abs(nnops.conv2d(x, p, "im2col") - ref)) < 1e-10


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_conv_paths_agree_single_precision(c, s, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((c, 9, 9)).astype(np.float32)
    # weights drawn the way the model initialises them (fan-in uniform)
    a = 1 / np.sqrt(c * 9)
    p = Conv2dParams(r.uniform(-a, a, (2 * c, c, 3, 3)).astype(np.float32), stride=s, padding=1)
    assert np.max(np.abs(nnops.conv2d(x, p, "direct") - nnops.conv2d(x, p, "im2col"))) < 1e-6


def test_pointwise_conv_is_per_pixel_linear(rng):
    x = rng.standard_normal((5, 4, 3))
    W = rng.standard_normal((5, 7))
    b = rng.standard_normal(7)
    p = Conv2dParams(W.T[:, :, None, None].copy(), b)
    tokens = x.reshape(5, -1).T
    ref = nnops.linear(tokens, W, b).T.reshape(7, 4, 3)
    assert np.max(np.abs(nnops.conv2d(x, p) - ref)) < 1e-10


def test_conv_errors(rng):
    p = Conv2dParams(np.ones((2, 3, 3, 3)))
    with pytest.raises(DimensionError):
        nnops.conv2d(np.ones((2, 5, 5)), p)
    with pytest.raises(DimensionError):
        nnops.conv2d(np.ones((3, 2, 2)), p)  # empty output without padding
    with pytest.raises(DimensionError):
        Conv2dParams(np.ones((3, 1, 3, 3)), groups=2)


def test_batchnorm_examples(rng):
    x = rng.standard_normal((3, 2, 2))
    ident = BatchNormParams(np.ones(3), np.zeros(3), np.zeros(3), np.ones(3))
    np.testing.assert_allclose(nnops.batchnorm_infer(x, ident), x / np.sqrt(1 + 1e-5), rtol=1e-15)
    assert np.max(np.abs(nnops.batchnorm_infer(x, ident) - x)) < 1e-4
    beta = np.array([1.0, -2.0, 0.5])
    zero_gamma = BatchNormParams(np.zeros(3), beta, rng.standard_normal(3), np.ones(3))
    np.testing.assert_array_equal(nnops.batchnorm_infer(x, zero_gamma), np.broadcast_to(beta[:, None, None], x.shape))


def test_batchnorm_vs_pointwise_formula(rng):
    x = rng.standard_normal((4, 3, 5))
    bn = random_bn(rng, 4)
    ref = oracles.batchnorm(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps)
    assert np.max(np.abs(nnops.batchnorm_infer(x, bn) - ref)) < 1e-12


def test_batchnorm_errors():
    with pytest.raises(DimensionError):
        nnops.batchnorm_infer(np.ones((2, 2, 2)), BatchNormParams(*(np.ones(3),) * 4))
    with pytest.raises(ValueError):
        BatchNormParams(np.ones(2), np.ones(2), np.ones(2), -np.ones(2))
    with pytest.raises(DimensionError):
        BatchNormParams(np.ones(2), np.ones(3), np.ones(2), np.ones(2))


def test_fold_identity_bn(rng):
    conv = Conv2dParams(rng.standard_normal((3, 3, 3, 3)), rng.standard_normal(3), padding=1)
    bn = BatchNormParams(np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), eps=0.0)
    folded = nnops.fold_bn_into_conv(conv, bn)
    np.testing.assert_array_equal(folded.weight, conv.weight)
    np.testing.assert_array_equal(folded.bias, conv.bias)


def test_fold_scaling_case(rng):
    conv = Conv2dParams(rng.standard_normal((2, 1, 3, 3)), groups=2, padding=1)
    # var + eps == 1 -> pure gamma scaling
    bn = BatchNormParams(np.full(2, 2.0), np.zeros(2), np.zeros(2), np.full(2, 1 - 1e-5), eps=1e-5)
    folded = nnops.fold_bn_into_conv(conv, bn)
    np.testing.assert_allclose(folded.weight, 2 * conv.weight, rtol=1e-15)
    np.testing.assert_array_equal(folded.bias, np.zeros(2))


@given(st.integers(1, 6), st.sampled_from(["depthwise", "pointwise", "dense3"]), st.integers(1, 2),
       st.booleans(), st.integers(0, 2**32 - 1))
def test_fold_matches_unfused_single_precision(C, kind, stride, with_bias, seed):
    r = np.random.default_rng(seed)
    g, k = {"depthwise": (C, 3), "pointwise": (1, 1), "dense3": (1, 3)}[kind]
    a = 1 / np.sqrt(C // g * k * k)
    conv = Conv2dParams(r.uniform(-a, a, (C, C // g, k, k)).astype(np.float32),
                        r.uniform(-a, a, C).astype(np.float32) if with_bias else None,
                        stride=stride, padding=k // 2, groups=g)
    bn = random_bn(r, C, np.float32)
    x = r.standard_normal((C, 8, 8)).astype(np.float32)
    fused = nnops.conv2d(x, nnops.fold_bn_into_conv(conv, bn))
    ref = nnops.batchnorm_infer(nnops.conv2d(x, conv), bn)
    assert fused.dtype == np.float32
    assert np.max(np.abs(fused - ref)) < 1e-6


def test_fold_channel_mismatch():
    with pytest.raises(DimensionError):
        nnops.fold_bn_into_conv(Conv2dParams(np.ones((2, 1, 1, 1))), BatchNormParams(*(np.ones(3),) * 4))


def test_gelu_values():
    assert nnops.gelu(np.array(0.0)) == 0.0
    assert abs(nnops.gelu(np.array(10.0)) - 10.0) < 1e-12
    # 40-digit evaluation of the tanh form at x = 1
    assert abs(nnops.gelu(np.array(1.0)) - 0.8411919906082767) < 1e-15
    assert abs(round(float(nnops.gelu(np.array(1.0))), 6) - 0.841192) < 1e-12


def test_gelu_close_to_exact_erf_form():
    from math import erf, sqrt

    xs = np.linspace(-6, 6, 241)
    exact = np.array([0.5 * v * (1 + erf(v / sqrt(2))) for v in xs])
    assert np.max(np.abs(nnops.gelu(xs) - exact)) < 1e-3


def test_global_avg_pool(rng):
    np.testing.assert_array_equal(nnops.global_avg_pool(np.full((2, 3, 3), 1.5)), [1.5, 1.5])
    np.testing.assert_array_equal(nnops.global_avg_pool(np.array([[[1.0, 2], [3, 4]]])), [2.5])
    x = rng.standard_normal((4, 5, 6))
    ref = [sum(x[c].ravel()) / 30 for c in range(4)]
    assert np.max(np.abs(nnops.global_avg_pool(x) - ref)) < 1e-12


def test_linear(rng):
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(nnops.linear(x, np.eye(4), np.zeros(4)), x)
    np.testing.assert_array_equal(nnops.linear(np.array([[1.0, 2]]), np.array([[1.0], [1]]), np.array([1.0])), [[4.0]])
    W, b = rng.standard_normal((4, 5)), rng.standard_normal(5)
    assert np.max(np.abs(nnops.linear(x, W, b) - (oracles.matmul(x, W) + b))) < 1e-12
    with pytest.raises(DimensionError):
        nnops.linear(x, np.ones((3, 2)))
    with pytest.raises(DimensionError):
        nnops.linear(x, W, np.ones(4))


def test_kernels_do_not_mutate(rng):
    x = rng.standard_normal((2, 5, 5))
    x0 = x.copy()
    p = Conv2dParams(rng.standard_normal((2, 1, 3, 3)), padding=1, groups=2)
    nnops.conv2d(x, p, "direct"), nnops.conv2d(x, p), nnops.gelu(x), nnops.batchnorm_infer(x, random_bn(rng, 2))
    np.testing.assert_array_equal(x, x0)
