"""Dense double-precision building blocks and a finite-difference gradient checker.

Matrices are plain ``numpy.ndarray`` objects in float64, C (row-major) order.
Every layer in the package follows one contract::

    out, cache = forward(params, x)
    d_x, d_params = backward(cache, d_out)

where ``params`` is a list of arrays and ``d_params`` mirrors it entry by entry.
:func:`grad_check` verifies any pair written to that contract.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError

Matrix = np.ndarray

ForwardFn = Callable[[Sequence[np.ndarray], np.ndarray], tuple]
BackwardFn = Callable[[object, np.ndarray], tuple]


def as_matrix(a) -> Matrix:
    """Return ``a`` as a finite, C-contiguous float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix contains NaN or Inf")
    return m


def _shape_str(a: np.ndarray) -> str:
    return "x".join(str(d) for d in a.shape)


def mat_mul(a, b) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"cannot multiply {_shape_str(a)} by {_shape_str(b)}"
        )
    return a @ b


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


_BINARY = {
    "hadamard": np.multiply,
    "add": np.add,
    "sub": np.subtract,
}
_UNARY = {"sigmoid": sigmoid, "tanh": tanh}


def elementwise(kind: str, *args) -> Matrix:
    """Apply a named entrywise operation.

    ``sigmoid`` and ``tanh`` take one operand; ``hadamard``, ``add`` and
    ``sub`` take two operands of identical shape (no broadcasting).
    """
    if kind in _UNARY:
        if len(args) != 1:
            raise DimensionError(f"{kind} takes one operand, got {len(args)}")
        return _UNARY[kind](args[0])
    if kind in _BINARY:
        if len(args) != 2:
            raise DimensionError(f"{kind} takes two operands, got {len(args)}")
        a = np.asarray(args[0], dtype=np.float64)
        b = np.asarray(args[1], dtype=np.float64)
        if a.shape != b.shape:
            raise DimensionError(
                f"{kind}: shape mismatch {_shape_str(a)} vs {_shape_str(b)}"
            )
        return _BINARY[kind](a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# -- reference layers --------------------------------------------------------

def linear_forward(params, x):
    """y = x W^T + b for row-vector inputs ``x`` of shape (N, in)."""
    W, b = params
    return x @ W.T + b, (x, W)


def linear_backward(cache, d_out):
    x, W = cache
    return d_out @ W, [d_out.T @ x, d_out.sum(axis=0)]


def sigmoid_forward(params, x):
    y = sigmoid(x)
    return y, y


def sigmoid_backward(cache, d_out):
    y = cache
    return d_out * y * (1.0 - y), []


# -- gradient verification ----------------------------------------------------

def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return np.abs(analytic - numeric) / denom


def grad_check(
    layer_forward: ForwardFn,
    layer_backward: BackwardFn,
    params: Sequence[np.ndarray],
    x: np.ndarray,
    epsilon: float = 1e-5,
    seed: int = 0,
) -> float:
    """Maximum relative error between analytic and central-difference gradients.

    The scalar objective is ``sum(c * forward(params, x))`` for a fixed random
    cotangent ``c`` drawn from ``seed``; a random weighting catches errors that
    cancel under a plain sum. Every parameter entry and every input entry is
    perturbed by ``+-epsilon``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]
    x = np.array(x, dtype=np.float64)

    out, cache = layer_forward(params, x)
    out = np.asarray(out, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NumericError("forward produced non-finite output")
    cot = np.random.default_rng(seed).uniform(-1.0, 1.0, size=out.shape)
    d_x, d_params = layer_backward(cache, cot)

    def objective():
        y, _ = layer_forward(params, x)
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise NumericError("forward produced non-finite output")
        return float(np.sum(cot * y))

    def numeric_grad(arr):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = objective()
            flat[i] = orig - epsilon
            fm = objective()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * epsilon)
        return g

    worst = 0.0
    targets = list(zip(params, d_params))
    if d_x is not None:
        targets.append((x, d_x))
    for arr, analytic in targets:
        if arr.size == 0:
            continue
        analytic = np.asarray(analytic, dtype=np.float64)
        if analytic.shape != arr.shape:
            raise DimensionError(
                f"gradient shape {_shape_str(analytic)} does not mirror "
                f"parameter shape {_shape_str(arr)}"
            )
        err = relative_error(analytic, numeric_grad(arr))
        worst = max(worst, float(err.max()))
    return worst
