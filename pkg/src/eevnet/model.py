"""Two-modality bidirectional GRU regressor with context-gated late fusion.

Per modality, features pass through a 2-layer bidirectional GRU stack (no
weights shared between modalities or directions). The per-step outputs of
both stacks are concatenated and passed through

    context gate -> affine projection to 15 emotions -> context gate -> sigmoid

(or ``... -> sigmoid -> context gate`` with ``head_order="sigmoid_gate"``).

All sequence arrays are ``(T, D)`` for one clip or ``(B, T, D)`` for a batch of
equal-length clips. Vectors are rows: a GRU step computes ``x @ W.T``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterator, List

import numpy as np

from .errors import AlignmentError, DimensionError, InputError
from .numerics import sigmoid

N_EMOTIONS = 15
HEAD_ORDERS = ("gate_sigmoid", "sigmoid_gate")


@dataclass(frozen=True)
class ModelConfig:
    visual_dim: int = 1536
    audio_dim: int = 128
    hidden_dim: int = 256
    emotions: int = N_EMOTIONS
    init_seed: int = 0
    head_order: str = "gate_sigmoid"

    def __post_init__(self):
        for name in ("visual_dim", "audio_dim", "hidden_dim"):
            if int(getattr(self, name)) <= 0:
                raise InputError(f"{name} must be positive")
        if self.emotions != N_EMOTIONS:
            raise InputError(f"emotions is fixed at {N_EMOTIONS}")
        if self.head_order not in HEAD_ORDERS:
            raise InputError(f"head_order must be one of {HEAD_ORDERS}")

    @property
    def fused_dim(self) -> int:
        return 4 * self.hidden_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class GruCellParams:
    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[0]

    def arrays(self) -> List[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruCellParams":
        H, D = hidden_dim, input_dim
        kw = {}
        for gate in "zrh":
            kw[f"W_{gate}"] = np.zeros((H, D))
            kw[f"U_{gate}"] = np.zeros((H, H))
            kw[f"b_{gate}"] = np.zeros(H)
        return cls(**kw)


@dataclass
class BiGruLayerParams:
    forward: GruCellParams
    backward: GruCellParams


@dataclass
class BiGruStackParams:
    layers: List[BiGruLayerParams]

    def __post_init__(self):
        if len(self.layers) != 2:
            raise InputError("a stack holds exactly 2 bidirectional layers")
        H1 = self.layers[0].forward.hidden_dim
        if self.layers[1].forward.input_dim != 2 * H1:
            raise DimensionError("layer 2 input_dim must equal 2 x layer 1 hidden_dim")

    def cells(self) -> Iterator[GruCellParams]:
        for layer in self.layers:
            yield layer.forward
            yield layer.backward

    @property
    def output_dim(self) -> int:
        return 2 * self.layers[-1].forward.hidden_dim


@dataclass
class FusionHeadParams:
    cg1_W: np.ndarray
    cg1_b: np.ndarray
    proj_W: np.ndarray
    proj_b: np.ndarray
    cg2_W: np.ndarray
    cg2_b: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class ModelParams:
    visual_stack: BiGruStackParams
    audio_stack: BiGruStackParams
    head: FusionHeadParams
    config: ModelConfig

    def arrays(self) -> List[np.ndarray]:
        """All parameter arrays in canonical serialization order."""
        out = []
        for stack in (self.visual_stack, self.audio_stack):
            for cell in stack.cells():
                out.extend(cell.arrays())
        out.extend(self.head.arrays())
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.arrays()])

    def copy(self) -> "ModelParams":
        return params_from_arrays(self.config, [a.copy() for a in self.arrays()])


def param_shapes(config: ModelConfig) -> List[tuple]:
    """Shapes of every parameter array in canonical order."""
    H, E, F = config.hidden_dim, config.emotions, config.fused_dim
    shapes = []

    def cell(D):
        return [(H, D), (H, H), (H,)] * 3

    for in_dim in (config.visual_dim, config.audio_dim):
        for layer_in in (in_dim, 2 * H):
            shapes.extend(cell(layer_in))  # forward direction
            shapes.extend(cell(layer_in))  # backward direction
    shapes += [(F, F), (F,), (E, F), (E,), (E, E), (E,)]
    return shapes


def param_count(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(config)))


def params_from_arrays(config: ModelConfig, arrays) -> ModelParams:
    arrays = list(arrays)
    shapes = param_shapes(config)
    if len(arrays) != len(shapes):
        raise DimensionError(f"expected {len(shapes)} arrays, got {len(arrays)}")
    for a, s in zip(arrays, shapes):
        if tuple(a.shape) != tuple(s):
            raise DimensionError(f"parameter shape {a.shape} != expected {s}")
    it = iter(arrays)

    def cell():
        return GruCellParams(*(next(it) for _ in range(9)))

    def stack():
        return BiGruStackParams(
            [BiGruLayerParams(cell(), cell()), BiGruLayerParams(cell(), cell())]
        )

    visual = stack()
    audio = stack()
    head = FusionHeadParams(*(next(it) for _ in range(6)))
    return ModelParams(visual, audio, head, config)


def params_from_flat(config: ModelConfig, flat) -> ModelParams:
    flat = np.asarray(flat, dtype=np.float64)
    n = param_count(config)
    if flat.size != n:
        raise DimensionError(f"expected {n} weights, got {flat.size}")
    arrays, pos = [], 0
    for s in param_shapes(config):
        k = int(np.prod(s))
        arrays.append(flat[pos:pos + k].reshape(s).copy())
        pos += k
    return params_from_arrays(config, arrays)


def init_params(config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn in canonical order."""
    rng = np.random.default_rng(config.init_seed)
    arrays = []
    for s in param_shapes(config):
        if len(s) == 1:
            arrays.append(np.zeros(s))
        else:
            fan_out, fan_in = s
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            arrays.append(rng.uniform(-lim, lim, size=s))
    return params_from_arrays(config, arrays)


# -- GRU ----------------------------------------------------------------------

def gru_cell_forward(x, h_prev, p: GruCellParams):
    """One GRU step; ``x`` is (D,) or (B, D), ``h_prev`` matches with H."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape[-1] != p.input_dim or h_prev.shape[-1] != p.hidden_dim:
        raise DimensionError(
            f"GRU cell expects input {p.input_dim} / hidden {p.hidden_dim}, "
            f"got {x.shape[-1]} / {h_prev.shape[-1]}"
        )
    z = sigmoid(x @ p.W_z.T + h_prev @ p.U_z.T + p.b_z)
    r = sigmoid(x @ p.W_r.T + h_prev @ p.U_r.T + p.b_r)
    h_cand = np.tanh(x @ p.W_h.T + (r * h_prev) @ p.U_h.T + p.b_h)
    return (1.0 - z) * h_prev + z * h_cand


def _gru_scan(x, p: GruCellParams):
    """Run one direction over (B, T, D) starting from h=0."""
    x = np.ascontiguousarray(x)
    B, T, _ = x.shape
    H = p.hidden_dim
    # input projections for every step at once
    xz = x @ p.W_z.T + p.b_z
    xr = x @ p.W_r.T + p.b_r
    xh = x @ p.W_h.T + p.b_h
    hs = np.empty((B, T + 1, H))
    hs[:, 0] = 0.0
    zs = np.empty((B, T, H))
    rs = np.empty((B, T, H))
    cs = np.empty((B, T, H))
    for t in range(T):
        hp = hs[:, t]
        z = sigmoid(xz[:, t] + hp @ p.U_z.T)
        r = sigmoid(xr[:, t] + hp @ p.U_r.T)
        c = np.tanh(xh[:, t] + (r * hp) @ p.U_h.T)
        hs[:, t + 1] = (1.0 - z) * hp + z * c
        zs[:, t], rs[:, t], cs[:, t] = z, r, c
    return hs[:, 1:], (x, p, hs, zs, rs, cs)


def _gru_scan_backward(cache, d_out):
    x, p, hs, zs, rs, cs = cache
    B, T, _ = x.shape
    H = p.hidden_dim
    d_az = np.empty((B, T, H))
    d_ar = np.empty((B, T, H))
    d_ah = np.empty((B, T, H))
    dU_z = np.zeros_like(p.U_z)
    dU_r = np.zeros_like(p.U_r)
    dU_h = np.zeros_like(p.U_h)
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        hp = hs[:, t]
        z, r, c = zs[:, t], rs[:, t], cs[:, t]
        dh = d_out[:, t] + dh_next
        dz = dh * (c - hp)
        dc = dh * z
        dhp = dh * (1.0 - z)
        da_h = dc * (1.0 - c * c)
        rhp = r * hp
        dU_h += da_h.T @ rhp
        d_rhp = da_h @ p.U_h
        dr = d_rhp * hp
        dhp += d_rhp * r
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        dU_z += da_z.T @ hp
        dU_r += da_r.T @ hp
        dhp += da_z @ p.U_z + da_r @ p.U_r
        d_az[:, t], d_ar[:, t], d_ah[:, t] = da_z, da_r, da_h
        dh_next = dhp
    x2 = x.reshape(B * T, -1)
    az2 = d_az.reshape(B * T, H)
    ar2 = d_ar.reshape(B * T, H)
    ah2 = d_ah.reshape(B * T, H)
    grads = GruCellParams(
        W_z=az2.T @ x2, U_z=dU_z, b_z=az2.sum(axis=0),
        W_r=ar2.T @ x2, U_r=dU_r, b_r=ar2.sum(axis=0),
        W_h=ah2.T @ x2, U_h=dU_h, b_h=ah2.sum(axis=0),
    )
    dx = d_az @ p.W_z + d_ar @ p.W_r + d_ah @ p.W_h
    return dx, grads


def _as_batch(seq, name="sequence"):
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 2:
        return seq[None], True
    if seq.ndim == 3:
        return seq, False
    raise DimensionError(f"{name} must be (T, D) or (B, T, D), got ndim={seq.ndim}")


def _bigru_layer_forward(x, layer: BiGruLayerParams):
    hf, cf = _gru_scan(x, layer.forward)
    hb_rev, cb = _gru_scan(x[:, ::-1], layer.backward)
    out = np.concatenate([hf, hb_rev[:, ::-1]], axis=-1)
    return out, (cf, cb)


def _bigru_layer_backward(cache, d_out):
    cf, cb = cache
    H = d_out.shape[-1] // 2
    dx_f, gf = _gru_scan_backward(cf, d_out[..., :H])
    dx_b_rev, gb = _gru_scan_backward(cb, d_out[..., H:][:, ::-1])
    return dx_f + dx_b_rev[:, ::-1], BiGruLayerParams(gf, gb)


def _stack_forward(x, p: BiGruStackParams):
    if x.shape[1] < 1:
        raise InputError("empty sequence")
    if x.shape[-1] != p.layers[0].forward.input_dim:
        raise DimensionError(
            f"stack expects feature dim {p.layers[0].forward.input_dim}, got {x.shape[-1]}"
        )
    caches = []
    h = x
    for layer in p.layers:
        h, c = _bigru_layer_forward(h, layer)
        caches.append(c)
    return h, caches


def _stack_backward(caches, d_out):
    grads = []
    d = d_out
    for c in reversed(caches):
        d, g = _bigru_layer_backward(c, d)
        grads.append(g)
    return d, BiGruStackParams(grads[::-1])


def bigru_stack_forward(seq, p: BiGruStackParams) -> np.ndarray:
    """(T, D) -> (T, 2H) through both bidirectional layers."""
    x, squeeze = _as_batch(seq)
    out, _ = _stack_forward(x, p)
    return out[0] if squeeze else out


# -- head ---------------------------------------------------------------------

def context_gate(x, W, b):
    """sigma(x W^T + b) * x, row-vector form."""
    x = np.asarray(x, dtype=np.float64)
    if W.shape != (x.shape[-1], x.shape[-1]) or b.shape[-1] != x.shape[-1]:
        raise DimensionError(f"context gate W {W.shape} incompatible with input dim {x.shape[-1]}")
    return sigmoid(x @ W.T + b) * x


def _gate_forward(x, W, b):
    g = sigmoid(x @ W.T + b)
    return g * x, (x, g, W)


def _gate_backward(cache, d_out):
    x, g, W = cache
    da = d_out * x * g * (1.0 - g)
    dx = d_out * g + da @ W
    a2 = da.reshape(-1, da.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return dx, a2.T @ x2, a2.sum(axis=0)


def _head_forward(fused, head: FusionHeadParams, order: str):
    c1, gc1 = _gate_forward(fused, head.cg1_W, head.cg1_b)
    logits = c1 @ head.proj_W.T + head.proj_b
    if order == "gate_sigmoid":
        c2, gc2 = _gate_forward(logits, head.cg2_W, head.cg2_b)
        out = sigmoid(c2)
    else:
        s = sigmoid(logits)
        out, gc2 = _gate_forward(s, head.cg2_W, head.cg2_b)
    return out, (gc1, c1, gc2, out, head)


def _head_backward(cache, d_out, order: str):
    gc1, c1, gc2, out, head = cache
    if order == "gate_sigmoid":
        d_c2 = d_out * out * (1.0 - out)
        d_logits, dW2, db2 = _gate_backward(gc2, d_c2)
    else:
        d_s, dW2, db2 = _gate_backward(gc2, d_out)
        s = gc2[0]
        d_logits = d_s * s * (1.0 - s)
    lg2 = d_logits.reshape(-1, d_logits.shape[-1])
    dWp = lg2.T @ c1.reshape(-1, c1.shape[-1])
    dbp = lg2.sum(axis=0)
    d_c1 = d_logits @ head.proj_W
    d_fused, dW1, db1 = _gate_backward(gc1, d_c1)
    grads = FusionHeadParams(dW1, db1, dWp, dbp, dW2, db2)
    return d_fused, grads


# -- full model ---------------------------------------------------------------

class ForwardCache:
    """Intermediate values from :func:`model_forward`, consumed once by backward."""

    def __init__(self, params, squeeze, out_shape, v_cache, a_cache, h_cache, split):
        self.params = params
        self.squeeze = squeeze
        self.out_shape = out_shape
        self.v_cache = v_cache
        self.a_cache = a_cache
        self.h_cache = h_cache
        self.split = split


def model_forward(visual, audio, p: ModelParams, return_cache: bool = False):
    """Map aligned visual/audio rows to per-row emotion scores in (0, 1)."""
    v, squeeze_v = _as_batch(visual, "visual")
    a, squeeze_a = _as_batch(audio, "audio")
    if v.shape[:2] != a.shape[:2] or squeeze_v != squeeze_a:
        raise AlignmentError(
            f"visual rows {v.shape[:-1]} and audio rows {a.shape[:-1]} are not aligned"
        )
    hv, cv = _stack_forward(v, p.visual_stack)
    ha, ca = _stack_forward(a, p.audio_stack)
    fused = np.concatenate([hv, ha], axis=-1)
    out, ch = _head_forward(fused, p.head, p.config.head_order)
    result = out[0] if squeeze_v else out
    if not return_cache:
        return result
    cache = ForwardCache(p, squeeze_v, result.shape, cv, ca, ch, hv.shape[-1])
    return result, cache


def model_backward(cache: ForwardCache, d_output, params: ModelParams = None):
    """Reverse-mode gradients for every parameter (and both inputs).

    Returns ``(grads, d_visual, d_audio)`` where ``grads`` is a
    :class:`ModelParams` holding gradient arrays.
    """
    if params is not None and params is not cache.params:
        raise RuntimeError("cache was produced with a different ModelParams")
    d_output = np.asarray(d_output, dtype=np.float64)
    if d_output.shape != cache.out_shape:
        raise RuntimeError(
            f"cotangent shape {d_output.shape} does not match cached output {cache.out_shape}"
        )
    p = cache.params
    d = d_output[None] if cache.squeeze else d_output
    d_fused, g_head = _head_backward(cache.h_cache, d, p.config.head_order)
    d_v, g_v = _stack_backward(cache.v_cache, d_fused[..., :cache.split])
    d_a, g_a = _stack_backward(cache.a_cache, d_fused[..., cache.split:])
    grads = ModelParams(g_v, g_a, g_head, p.config)
    if cache.squeeze:
        d_v, d_a = d_v[0], d_a[0]
    return grads, d_v, d_a
