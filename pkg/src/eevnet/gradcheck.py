"""Finite-difference verification of every hand-written backward pass."""

from __future__ import annotations

from typing import Dict

import numpy as np

from . import model as M
from .losses import ccc_loss, kl_loss, l1_loss
from .numerics import grad_check, linear_backward, linear_forward, sigmoid_backward, sigmoid_forward

THRESHOLD = 1e-4


def _rand(rng, *shape, scale=1.0):
    return rng.uniform(-scale, scale, size=shape)


def _cell_arrays(rng, D, H):
    return [a for _ in range(3) for a in (_rand(rng, H, D), _rand(rng, H, H), _rand(rng, H, scale=0.5))]


def _gru_case(rng, T):
    D, H = 3, 4
    params = _cell_arrays(rng, D, H)

    def fwd(ps, x):
        return M._gru_scan(x[None], M.GruCellParams(*ps))

    def bwd(cache, d):
        dx, g = M._gru_scan_backward(cache, d)
        return dx[0], g.arrays()

    def fwd2(ps, x):
        out, cache = fwd(ps, x)
        return out[0], cache

    def bwd2(cache, d):
        return bwd(cache, d[None])

    return fwd2, bwd2, params, rng.normal(size=(T, D))


def _stack_case(rng):
    D, H, T = 3, 2, 4
    params = []
    for layer_in in (D, 2 * H):
        params += _cell_arrays(rng, layer_in, H) + _cell_arrays(rng, layer_in, H)

    def build(ps):
        cells = [M.GruCellParams(*ps[9 * i:9 * i + 9]) for i in range(4)]
        return M.BiGruStackParams([M.BiGruLayerParams(cells[0], cells[1]),
                                   M.BiGruLayerParams(cells[2], cells[3])])

    def fwd(ps, x):
        out, caches = M._stack_forward(x[None], build(ps))
        return out[0], caches

    def bwd(caches, d):
        dx, g = M._stack_backward(caches, d[None])
        arrays = [a for c in g.cells() for a in c.arrays()]
        return dx[0], arrays

    return fwd, bwd, params, rng.normal(size=(T, D))


def _gate_case(rng):
    F = 5

    def fwd(ps, x):
        return M._gate_forward(x, ps[0], ps[1])

    def bwd(cache, d):
        dx, dW, db = M._gate_backward(cache, d)
        return dx, [dW, db]

    return fwd, bwd, [_rand(rng, F, F), _rand(rng, F)], rng.normal(size=(4, F))


def _head_case(rng, order):
    F, E = 8, M.N_EMOTIONS
    params = [_rand(rng, F, F), _rand(rng, F), _rand(rng, E, F), _rand(rng, E),
              _rand(rng, E, E), _rand(rng, E)]

    def fwd(ps, x):
        return M._head_forward(x, M.FusionHeadParams(*ps), order)

    def bwd(cache, d):
        d_x, g = M._head_backward(cache, d, order)
        return d_x, g.arrays()

    return fwd, bwd, params, rng.normal(size=(3, F))


def _model_case(rng, order="gate_sigmoid"):
    cfg = M.ModelConfig(visual_dim=6, audio_dim=4, hidden_dim=3, init_seed=11, head_order=order)
    arrays = [a + (_rand(rng, *a.shape, scale=0.3) if a.ndim == 1 else 0.0)
              for a in M.init_params(cfg).arrays()]

    def fwd(ps, x):
        p = M.params_from_arrays(cfg, ps)
        return M.model_forward(x[:, :6], x[:, 6:], p, return_cache=True)

    def bwd(cache, d):
        g, dv, da = M.model_backward(cache, d)
        return np.concatenate([dv, da], axis=-1), g.arrays()

    return fwd, bwd, arrays, rng.normal(size=(5, 10))


def _loss_case(rng, loss):
    T, E = 6, M.N_EMOTIONS
    label = rng.uniform(0.05, 0.95, size=(T, E))

    def fwd(ps, x):
        rep = loss(x, label)
        return np.array([rep.value]), rep.d_pred

    def bwd(d_pred, d):
        return d_pred * d[0], []

    pred = rng.uniform(0.05, 0.95, size=(T, E))
    # keep L1 away from its kink and every pred strictly interior
    close = np.abs(pred - label) < 0.05
    pred[close] = np.where(label[close] < 0.5, label[close] + 0.1, label[close] - 0.1)
    return fwd, bwd, [], pred


def layer_cases(seed: int = 0) -> Dict[str, tuple]:
    rng = np.random.default_rng(seed)
    return {
        "projection": (linear_forward, linear_backward,
                   [rng.normal(size=(3, 4)), rng.normal(size=3)], rng.normal(size=(5, 4))),
        "sigmoid": (sigmoid_forward, sigmoid_backward, [], rng.normal(size=(4, 3))),
        "gru_cell": _gru_case(rng, 1),
        "gru_recurrence": _gru_case(rng, 5),
        "bigru_stack": _stack_case(rng),
        "context_gate": _gate_case(rng),
        "fusion_head": _head_case(rng, "gate_sigmoid"),
        "fusion_head_sigmoid_gate": _head_case(rng, "sigmoid_gate"),
        "l1_loss": _loss_case(rng, l1_loss),
        "kl_loss": _loss_case(rng, kl_loss),
        "ccc_loss": _loss_case(rng, ccc_loss),
        "model": _model_case(rng),
    }


def run_suite(seed: int = 0, epsilon: float = 1e-5) -> Dict[str, float]:
    """Max relative error per layer."""
    return {
        name: grad_check(fwd, bwd, params, x, epsilon, seed)
        for name, (fwd, bwd, params, x) in layer_cases(seed).items()
    }
