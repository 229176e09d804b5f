"""Training loop, Adam, dense-prediction strategies and ensembling.

Gradients for a batch are computed per fixed shard of clips and reduced in
shard order, so the result does not depend on how many worker threads run
the shards.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from .dataio import LABEL_RATE_HZ, Checkpoint, FeatureSequence, LabelTrack
from .errors import InputError, NumericError
from .losses import LOSS_KINDS, compute_loss
from .metrics import score_dataset, score_video
from .model import (
    ModelConfig,
    ModelParams,
    init_params,
    model_backward,
    model_forward,
    param_count,
    params_from_flat,
)
from .signal_ops import SampledTrack, linear_interpolate, resample, segment_clips

logger = logging.getLogger(__name__)


class PredictionStrategy(enum.Enum):
    DENSE_6HZ_10S = "dense6hz_10s"
    DENSE_6HZ_60S = "dense6hz_60s"
    SPARSE_1HZ_INTERP = "sparse1hz_interp"

    @property
    def input_rate_hz(self) -> float:
        return 1.0 if self is PredictionStrategy.SPARSE_1HZ_INTERP else LABEL_RATE_HZ

    @property
    def window(self) -> int:
        return 360 if self is PredictionStrategy.DENSE_6HZ_60S else 60

    @classmethod
    def for_sampling(cls, sample_rate_hz: float, clip_seconds: float) -> "PredictionStrategy":
        """Strategy whose inference windows match a training sampling setup."""
        if abs(sample_rate_hz - 1.0) < 1e-9:
            return cls.SPARSE_1HZ_INTERP
        if abs(sample_rate_hz - LABEL_RATE_HZ) < 1e-9:
            return cls.DENSE_6HZ_60S if clip_seconds * sample_rate_hz >= 360 else cls.DENSE_6HZ_10S
        raise InputError(f"no prediction strategy for sampling at {sample_rate_hz} Hz")


@dataclass
class TrainConfig:
    loss_kind: str = "l1"
    learning_rate: float = 1e-3
    epochs: int = 20
    clip_seconds: float = 60.0
    sample_rate_hz: float = 1.0
    batch_clips: int = 8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 5.0
    seed: int = 0
    validation_fraction: float = 0.2
    shard_clips: int = 4

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise InputError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        for name in ("learning_rate", "clip_seconds", "sample_rate_hz", "batch_clips",
                     "adam_eps", "grad_clip_norm", "shard_clips"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise InputError("adam betas must lie in (0, 1)")
        if not 0 < self.validation_fraction < 1:
            raise InputError("validation_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_score: List[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_pearson,best"]
        for i, (l, s) in enumerate(zip(self.train_loss, self.val_score)):
            sv = "" if np.isnan(s) else repr(float(s))
            lines.append(f"{i},{float(l)!r},{sv},{int(i == self.best_epoch)}")
        return "\n".join(lines) + "\n"


@contextmanager
def _single_threaded_blas():
    # BLAS-internal threading must not change summation order
    with threadpool_limits(limits=1):
        yield


def _flat(x) -> np.ndarray:
    return x.flatten() if isinstance(x, ModelParams) else np.asarray(x, dtype=np.float64)


def clip_by_global_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.sqrt(np.dot(grad, grad)))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """Clip by global norm, then one bias-corrected Adam update.

    ``params``/``grads`` may be :class:`ModelParams` or flat arrays; the
    return value has the same kind as ``params``.
    """
    w = _flat(params)
    g = _flat(grads)
    if w.shape != g.shape or state.m.shape != w.shape:
        raise InputError(f"shape mismatch: params {w.shape}, grads {g.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.isfinite(g))
        raise NumericError(
            f"non-finite gradient at step {state.step + 1}: {bad.size} entries, first index {bad[0]}"
        )
    g = clip_by_global_norm(g, cfg.grad_clip_norm)
    t = state.step + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    w_new = w - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    new_state = AdamState(m, v, t)
    if isinstance(params, ModelParams):
        return params_from_flat(params.config, w_new), new_state
    return w_new, new_state


# -- data preparation -------------------------------------------------------------

@dataclass
class Clip:
    visual: np.ndarray
    audio: np.ndarray
    label: np.ndarray


def _align(*tracks: SampledTrack) -> List[np.ndarray]:
    T = min(len(t) for t in tracks)
    return [t.values[:T] for t in tracks]


def make_clips(dataset, sample_rate_hz: float, clip_seconds: float) -> List[Clip]:
    clips = []
    for fs, lt in dataset:
        v, a = fs.tracks()
        v, a, y = _align(resample(v, sample_rate_hz), resample(a, sample_rate_hz),
                         resample(lt.track, sample_rate_hz))
        cv = segment_clips(SampledTrack(sample_rate_hz, v), clip_seconds)
        ca = segment_clips(SampledTrack(sample_rate_hz, a), clip_seconds)
        cy = segment_clips(SampledTrack(sample_rate_hz, y), clip_seconds)
        clips.extend(Clip(x.values, z.values, l.values) for x, z, l in zip(cv, ca, cy))
    return clips


def split_videos(n: int, fraction: float, seed: int) -> Tuple[List[int], List[int]]:
    """(train, validation) index lists, split by whole videos."""
    n_val = min(n - 1, int(round(fraction * n)))
    order = np.random.default_rng([seed, 0x5B]).permutation(n)
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


# -- gradients ----------------------------------------------------------------------

def _shard_grad(params: ModelParams, clips: Sequence[Clip], loss_kind: str, batch_size: int):
    """Sum over ``clips`` of per-clip loss gradients, each weighted 1/batch_size."""
    grad = np.zeros(param_count(params.config))
    loss_sum = 0.0
    groups = {}
    for c in clips:
        groups.setdefault(c.label.shape[0], []).append(c)
    for group in groups.values():
        v = np.stack([c.visual for c in group])
        a = np.stack([c.audio for c in group])
        y = np.stack([c.label for c in group])
        out, cache = model_forward(v, a, params, return_cache=True)
        rep = compute_loss(loss_kind, out, y)
        if not np.isfinite(rep.value):
            raise NumericError("non-finite loss")
        w = len(group) / batch_size
        g, _, _ = model_backward(cache, rep.d_pred * w)
        grad += g.flatten()
        loss_sum += rep.value * len(group)
    return grad, loss_sum


def batch_gradient(params, batch: Sequence[Clip], cfg: TrainConfig, pool=None):
    shards = [batch[i:i + cfg.shard_clips] for i in range(0, len(batch), cfg.shard_clips)]
    work = lambda s: _shard_grad(params, s, cfg.loss_kind, len(batch))  # noqa: E731
    results = list(pool.map(work, shards)) if pool is not None else [work(s) for s in shards]
    grad = np.zeros(param_count(params.config))
    loss_sum = 0.0
    for g, l in results:  # fixed shard order
        grad += g
        loss_sum += l
    return grad, loss_sum


# -- prediction ---------------------------------------------------------------------

def _grid_len(n: int, rate_hz: float, target_hz: float) -> int:
    return int(np.floor((n - 1) * target_hz / rate_hz + 1e-9)) + 1


def predict_video(
    features: FeatureSequence,
    params: ModelParams,
    strategy: PredictionStrategy = PredictionStrategy.SPARSE_1HZ_INTERP,
    feature_rate_hz: Optional[float] = None,
) -> SampledTrack:
    """Dense 6 Hz emotion track for one video."""
    strategy = PredictionStrategy(strategy)
    v, a = features.tracks(feature_rate_hz)
    n_out = _grid_len(len(v), v.rate_hz, LABEL_RATE_HZ)
    rate = strategy.input_rate_hz
    v, a = _align(resample(v, rate), resample(a, rate))
    n = v.shape[0]
    window = strategy.window
    if window > n:
        logger.info("predict_video(%s): window %d exceeds %d rows; shrinking",
                    features.video_id, window, n)
        window = n
    starts = list(range(0, n, window))
    preds = np.empty((n, params.config.emotions))
    full = [s for s in starts if s + window <= n]
    if full:
        vb = np.stack([v[s:s + window] for s in full])
        ab = np.stack([a[s:s + window] for s in full])
        out = model_forward(vb, ab, params)
        for s, o in zip(full, out):
            preds[s:s + window] = o
    for s in starts:
        if s + window > n:
            preds[s:] = model_forward(v[s:], a[s:], params)
    start = features.timestamps_ms[0] / 1000.0
    track = SampledTrack(rate, preds, start)
    if rate == LABEL_RATE_HZ:
        vals = preds[:n_out]
        if vals.shape[0] < n_out:
            vals = np.vstack([vals, np.repeat(vals[-1:], n_out - vals.shape[0], axis=0)])
        return SampledTrack(LABEL_RATE_HZ, vals, start)
    return linear_interpolate(track, LABEL_RATE_HZ, n_samples=n_out)


def predict_many(features_list, params, strategy, threads: int = 1, feature_rate_hz=None):
    with _single_threaded_blas():
        fn = lambda fs: predict_video(fs, params, strategy, feature_rate_hz)  # noqa: E731
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                return list(pool.map(fn, features_list))
        return [fn(fs) for fs in features_list]


def evaluate(params, dataset, strategy=PredictionStrategy.SPARSE_1HZ_INTERP, threads: int = 1) -> float:
    """Dataset mean Pearson of ``strategy`` predictions against 6 Hz labels."""
    preds = predict_many([fs for fs, _ in dataset], params, strategy, threads)
    return score_dataset([score_video(p, lt.track) for p, (_, lt) in zip(preds, dataset)])


def ensemble(predictions: Sequence[SampledTrack]) -> SampledTrack:
    """Per-timestamp, per-emotion arithmetic mean of several tracks."""
    if len(predictions) == 0:
        raise InputError("cannot ensemble zero predictions")
    T = min(len(p) for p in predictions)
    if any(len(p) != T for p in predictions):
        logger.info("ensemble: truncating %s rows to %d", [len(p) for p in predictions], T)
    # sorting fixes the summation order (exact permutation invariance); the
    # offset form returns identical inputs unchanged
    stack = np.sort(np.stack([p.values[:T] for p in predictions]), axis=0)
    lo, hi = stack[0], stack[-1]
    mean = np.clip(lo + (stack - lo).sum(axis=0) / len(predictions), lo, hi)
    first = predictions[0]
    return SampledTrack(first.rate_hz, mean, first.start_time_s)


# -- training -----------------------------------------------------------------------

def train(
    dataset: Sequence[Tuple[FeatureSequence, LabelTrack]],
    cfg: TrainConfig,
    model_config: Optional[ModelConfig] = None,
    validation: Optional[Sequence[Tuple[FeatureSequence, LabelTrack]]] = None,
    threads: int = 1,
) -> Tuple[Checkpoint, TrainHistory]:
    """Fit on ``dataset``; return the checkpoint of the best epoch.

    Without an explicit ``validation`` set, whole videos are held out by
    ``cfg.validation_fraction``. If nothing can be held out (a single video),
    the epoch with the lowest training loss is kept.
    """
    dataset = list(dataset)
    if not dataset:
        raise InputError("training needs at least one video")
    if validation is None:
        tr_idx, va_idx = split_videos(len(dataset), cfg.validation_fraction, cfg.seed)
        validation = [dataset[i] for i in va_idx]
        dataset = [dataset[i] for i in tr_idx]
    if model_config is None:
        fs0 = dataset[0][0]
        model_config = ModelConfig(visual_dim=fs0.visual.shape[1], audio_dim=fs0.audio.shape[1],
                                   init_seed=cfg.seed)
    strategy = PredictionStrategy.for_sampling(cfg.sample_rate_hz, cfg.clip_seconds)
    params = init_params(model_config)
    history = TrainHistory()
    clips = make_clips(dataset, cfg.sample_rate_hz, cfg.clip_seconds)
    if not clips:
        raise InputError("no training clips (videos too short)")
    state = AdamState.zeros(param_count(model_config))
    best_params, best_key = params, None

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        with _single_threaded_blas():
            for epoch in range(cfg.epochs):
                order = np.random.default_rng([cfg.seed, epoch]).permutation(len(clips))
                total = 0.0
                for i in range(0, len(order), cfg.batch_clips):
                    batch = [clips[j] for j in order[i:i + cfg.batch_clips]]
                    grad, loss_sum = batch_gradient(params, batch, cfg, pool)
                    params, state = adam_step(params, grad, state, cfg)
                    total += loss_sum
                train_loss = total / len(clips)
                if not np.isfinite(train_loss):
                    raise NumericError(f"non-finite training loss at epoch {epoch}")
                val = evaluate(params, validation, strategy, threads) if validation else float("nan")
                history.train_loss.append(train_loss)
                history.val_score.append(val)
                key = val if validation else -train_loss
                if best_key is None or key > best_key:
                    best_key, best_params, history.best_epoch = key, params, epoch
                logger.info("epoch %d loss %.6f val %.6f", epoch, train_loss, val)
    finally:
        if pool is not None:
            pool.shutdown()

    meta = {
        "loss_kind": cfg.loss_kind,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "best_epoch": history.best_epoch,
        "validation_score": "" if history.best_epoch < 0 else repr(history.val_score[history.best_epoch]),
        "strategy": strategy.value,
        "train_config": ";".join(f"{k}={v}" for k, v in cfg.to_dict().items()),
    }
    return Checkpoint.from_params(best_params, meta), history
