import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from eevnet.errors import DimensionError, NumericError
from eevnet.numerics import (
    elementwise,
    grad_check,
    linear_backward,
    linear_forward,
    mat_mul,
    sigmoid,
    sigmoid_backward,
    sigmoid_forward,
)


def test_mat_mul_identity_and_zero():
    m = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(mat_mul(np.eye(3), m), m)
    assert np.array_equal(mat_mul(np.zeros((2, 3)), m), np.zeros((2, 4)))


def test_mat_mul_hand_value():
    assert np.array_equal(mat_mul([[1, 2], [3, 4]], [[5], [6]]), [[17], [39]])


def test_mat_mul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match="2x3.*2x3"):
        mat_mul(np.zeros((2, 3)), np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_mat_mul_associative(n, k, m, p, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.uniform(-1, 1, s) for s in [(n, k), (k, m), (m, p)])
    left = mat_mul(mat_mul(a, b), c)
    right = mat_mul(a, mat_mul(b, c))
    scale = np.maximum(1.0, np.abs(left))
    assert np.all(np.abs(left - right) / scale <= 1e-9)


def test_elementwise_examples():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    assert elementwise("tanh", np.array([0.0]))[0] == 0.0
    assert np.array_equal(elementwise("hadamard", np.array([1.0, 2]), np.array([3.0, 4])), [3, 8])
    assert np.array_equal(elementwise("sub", np.array([1.0]), np.array([3.0])), [-2])


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        elementwise("add", np.zeros(2), np.zeros(3))


# beyond |x| ~ 19 (tanh) / 37 (sigmoid) float64 rounds onto the bound
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-15, 15)))
def test_activation_ranges(x):
    s = sigmoid(x)
    t = elementwise("tanh", x)
    assert np.all((s > 0) & (s < 1))
    assert np.all((t > -1) & (t < 1))


def test_grad_check_linear():
    rng = np.random.default_rng(7)
    W, b, x = rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=(5, 4))
    assert grad_check(linear_forward, linear_backward, [W, b], x, 1e-5, 7) < 1e-6


def test_grad_check_sigmoid():
    x = np.random.default_rng(1).normal(size=(4, 3))
    assert grad_check(sigmoid_forward, sigmoid_backward, [], x, 1e-5, 1) < 1e-6


def test_grad_check_detects_wrong_backward():
    def bad_backward(cache, d):
        dx, (dW, db) = linear_backward(cache, d)
        return dx, [dW * 1.01, db]

    rng = np.random.default_rng(0)
    err = grad_check(linear_forward, bad_backward, [rng.normal(size=(2, 2)), np.zeros(2)],
                     rng.normal(size=(3, 2)))
    assert err > 1e-3


def test_grad_check_rejects_nonfinite_forward():
    def fwd(params, x):
        return x / 0.0, None

    with np.errstate(divide="ignore"), pytest.raises(NumericError):
        grad_check(fwd, lambda c, d: (d, []), [], np.ones((1, 1)))
