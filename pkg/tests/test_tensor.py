import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from swiftattn import oracles
from swiftattn import tensor as T


def test_as_tensor_validates():
    t = T.as_tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float64 and t.flags.c_contiguous
    assert T.as_tensor([1.0], np.float32).dtype == np.float32
    with pytest.raises(T.DimensionError):
        T.as_tensor(np.zeros((0, 3)))
    with pytest.raises(T.DimensionError):
        T.as_tensor(np.zeros((1,) * 5))
    with pytest.raises(T.PrecisionError):
        T.as_tensor([1], np.float16)


def test_row_major_offsets():
    shape = (2, 3, 4)
    a = np.arange(24.0).reshape(shape)
    assert T.strides_of(shape) == (12, 4, 1)
    for idx in np.ndindex(shape):
        assert a.ravel()[T.offset_of(shape, idx)] == a[idx]


def test_matmul_examples():
    b = np.array([[1.0, 2], [3, 4]])
    np.testing.assert_array_equal(T.matmul(np.eye(2), b), b)
    np.testing.assert_array_equal(T.matmul(np.array([[1.0, 2]]), np.array([[3.0], [4]])), [[11.0]])


def test_matmul_random_vs_triple_loop(rng):
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    assert np.max(np.abs(T.matmul(a, b) - oracles.matmul(a, b))) < 1e-12


@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_matmul_matches_oracle_up_to_16(m, k, p, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((m, k)), r.standard_normal((k, p))
    assert np.max(np.abs(T.matmul(a, b) - oracles.matmul(a, b))) < 1e-12


def test_matmul_errors():
    with pytest.raises(T.DimensionError) as exc:
        T.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    assert "(2, 3)" in str(exc.value)
    with pytest.raises(T.PrecisionError):
        T.matmul(np.zeros((2, 2)), np.zeros((2, 2), np.float32))


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(np.zeros(3)), [1 / 3] * 3, atol=1e-15)
    for c in (-50.0, 0.0, 3.0, 700.0):
        np.testing.assert_allclose(T.softmax(np.array([c, c + math.log(2)])), [1 / 3, 2 / 3], atol=1e-12)
    # frozen from a 40-digit evaluation of 1/(1+e), e/(1+e)
    out = T.softmax(np.array([1000.0, 1001.0]))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.2689414213699951, 0.7310585786300049], atol=1e-15)


def test_softmax_axis():
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_allclose(T.softmax(x, axis=0).sum(axis=0), 1.0)
    np.testing.assert_allclose(T.softmax(x, axis=1).sum(axis=1), 1.0)
    with pytest.raises(T.DimensionError):
        T.softmax(x, axis=2)


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)), st.floats(-1e3, 1e3))
def test_softmax_shift_invariance(x, c):
    out = T.softmax(x)
    assert np.all(out > 0)
    assert abs(out.sum() - 1) < 1e-6
    assert np.max(np.abs(T.softmax(x + c) - out)) < 1e-12


def test_elementwise_examples():
    np.testing.assert_array_equal(T.mul(np.array([1.0, 2, 3]), 2), [2, 4, 6])
    np.testing.assert_array_equal(T.mul(np.array([[1.0, 2], [3, 4]]), np.array([10.0, 100])), [[10, 200], [30, 400]])
    a = np.array([[1.5, -2.0]])
    np.testing.assert_array_equal(T.add(a, np.zeros_like(a)), a)
    np.testing.assert_array_equal(T.scale(a, 2.0), [[3.0, -4.0]])
    np.testing.assert_array_equal(T.sub(a, a), [[0.0, 0.0]])


def test_elementwise_errors():
    with pytest.raises(T.DimensionError):
        T.add(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(T.DimensionError):
        T.scale(np.zeros(2), np.zeros(2))
    with pytest.raises(T.PrecisionError):
        T.add(np.zeros(2), np.zeros(2, np.float32))


def test_l2_normalize_examples(rng):
    np.testing.assert_allclose(T.l2_normalize_rows(np.array([[3.0, 4.0]])), [[0.6, 0.8]])
    np.testing.assert_array_equal(T.l2_normalize_rows(np.zeros((1, 3)), eps=1e-12), np.zeros((1, 3)))
    out = T.l2_normalize_rows(rng.standard_normal((4, 3)))
    assert np.max(np.abs(np.linalg.norm(out, axis=1) - 1)) < 1e-9


def test_l2_eps_per_precision():
    assert T.L2_EPS[np.dtype(np.float64)] == 1e-12
    assert T.L2_EPS[np.dtype(np.float32)] == 1e-6
    tiny = np.full((1, 2), 1e-9, np.float32)
    np.testing.assert_allclose(T.l2_normalize_rows(tiny), tiny / 1e-6)


def test_ops_do_not_mutate(rng):
    a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    a0, b0 = a.copy(), b.copy()
    T.matmul(a, b), T.softmax(a), T.add(a, b), T.mul(a, b[0]), T.l2_normalize_rows(a)
    np.testing.assert_array_equal(a, a0)
    np.testing.assert_array_equal(b, b0)
