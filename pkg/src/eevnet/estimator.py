"""scikit-learn style wrappers around the trainer and the label filters.

Samples are whole videos, so ``X`` is a list of :class:`FeatureSequence`
objects (or ``(visual, audio)`` array pairs at 6 Hz) and ``y`` a list of
(T, 15) label arrays on the 6 Hz grid.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataio import LABEL_RATE_HZ, FeatureSequence, LabelTrack
from .errors import DimensionError, InputError
from .metrics import score_dataset, score_video
from .model import ModelConfig
from .signal_ops import FILTERS, SampledTrack
from .trainer import PredictionStrategy, TrainConfig, predict_many, train


def _as_features(item, i: int) -> FeatureSequence:
    if isinstance(item, FeatureSequence):
        return item
    try:
        visual, audio = item
    except (TypeError, ValueError):
        raise InputError(f"sample {i}: expected FeatureSequence or (visual, audio)") from None
    visual = check_array(visual, dtype=np.float64, ensure_min_samples=2)
    audio = check_array(audio, dtype=np.float64, ensure_min_samples=2)
    ts = np.rint(np.arange(visual.shape[0]) * 1000.0 / LABEL_RATE_HZ).astype(np.int64)
    return FeatureSequence(f"sample{i:05d}", ts, visual, audio)


def check_videos(X) -> list:
    """Validate a list of videos and return it as FeatureSequences."""
    if isinstance(X, np.ndarray) and X.dtype != object:
        raise InputError("X must be a list of videos, not a single array")
    videos = [_as_features(item, i) for i, item in enumerate(X)]
    if not videos:
        raise InputError("X is empty")
    dims = {(v.visual.shape[1], v.audio.shape[1]) for v in videos}
    if len(dims) > 1:
        raise DimensionError(f"inconsistent feature dimensions across videos: {sorted(dims)}")
    return videos


def check_labels(y, videos) -> list:
    if len(y) != len(videos):
        raise InputError(f"got {len(y)} label tracks for {len(videos)} videos")
    out = []
    for fs, lab in zip(videos, y):
        if isinstance(lab, LabelTrack):
            out.append(lab)
            continue
        lab = check_array(lab, dtype=np.float64, ensure_min_samples=2)
        out.append(LabelTrack(fs.video_id, SampledTrack(LABEL_RATE_HZ, lab)))
    return out


class EvokedExpressionRegressor(RegressorMixin, BaseEstimator):
    """Two-stream BiGRU regressor with context-gated late fusion."""

    def __init__(self, hidden_dim=256, loss="l1", learning_rate=1e-3, epochs=20, clip_seconds=60.0,
                 sample_rate_hz=1.0, batch_clips=8, grad_clip_norm=5.0, validation_fraction=0.2,
                 head_order="gate_sigmoid", random_state=0, n_threads=1):
        self.hidden_dim = hidden_dim
        self.loss = loss
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.clip_seconds = clip_seconds
        self.sample_rate_hz = sample_rate_hz
        self.batch_clips = batch_clips
        self.grad_clip_norm = grad_clip_norm
        self.validation_fraction = validation_fraction
        self.head_order = head_order
        self.random_state = random_state
        self.n_threads = n_threads

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            loss_kind=self.loss, learning_rate=self.learning_rate, epochs=self.epochs,
            clip_seconds=self.clip_seconds, sample_rate_hz=self.sample_rate_hz,
            batch_clips=self.batch_clips, grad_clip_norm=self.grad_clip_norm,
            seed=self.random_state, validation_fraction=self.validation_fraction,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        videos = check_videos(X)
        labels = check_labels(y, videos)
        validation = None
        if X_val is not None:
            val_videos = check_videos(X_val)
            validation = list(zip(val_videos, check_labels(y_val, val_videos)))
        fs0 = videos[0]
        mc = ModelConfig(visual_dim=fs0.visual.shape[1], audio_dim=fs0.audio.shape[1],
                         hidden_dim=self.hidden_dim, init_seed=self.random_state,
                         head_order=self.head_order)
        self.checkpoint_, self.history_ = train(list(zip(videos, labels)), self._train_config(), mc,
                                                validation=validation, threads=self.n_threads)
        self.params_ = self.checkpoint_.to_params()
        self.strategy_ = PredictionStrategy.for_sampling(self.sample_rate_hz, self.clip_seconds)
        self.n_features_in_ = fs0.visual.shape[1] + fs0.audio.shape[1]
        return self

    def predict(self, X, strategy=None):
        """List of (T, 15) arrays, one per video, on the 6 Hz grid."""
        check_is_fitted(self, "params_")
        videos = check_videos(X)
        cfg = self.params_.config
        for v in videos:
            if (v.visual.shape[1], v.audio.shape[1]) != (cfg.visual_dim, cfg.audio_dim):
                raise DimensionError(
                    f"{v.video_id}: features ({v.visual.shape[1]}, {v.audio.shape[1]}) "
                    f"do not match the fitted model ({cfg.visual_dim}, {cfg.audio_dim})"
                )
        strategy = self.strategy_ if strategy is None else PredictionStrategy(strategy)
        return [t.values for t in predict_many(videos, self.params_, strategy, self.n_threads)]

    def score(self, X, y, sample_weight=None):
        """Dataset mean Pearson correlation over videos."""
        if sample_weight is not None:
            raise InputError("sample_weight is not supported")
        preds = self.predict(X)
        labels = check_labels(y, check_videos(X))
        return score_dataset([score_video(p, lab.values) for p, lab in zip(preds, labels)])


class LabelFilter(TransformerMixin, BaseEstimator):
    """Low-pass filter for (T, C) label tracks; stateless."""

    def __init__(self, kind="gaussian", cutoff_norm=0.1, order=2, window=5, sigma_samples=3.0):
        self.kind = kind
        self.cutoff_norm = cutoff_norm
        self.order = order
        self.window = window
        self.sigma_samples = sigma_samples

    def _kwargs(self):
        if self.kind not in FILTERS:
            raise InputError(f"kind must be one of {sorted(FILTERS)}")
        return {
            "butterworth": {"cutoff_norm": self.cutoff_norm, "order": self.order},
            "median": {"window": self.window},
            "gaussian": {"sigma_samples": self.sigma_samples},
        }[self.kind]

    def fit(self, X, y=None):
        self._kwargs()
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"expected {self.n_features_in_} channels, got {X.shape[1]}")
        return FILTERS[self.kind](SampledTrack(LABEL_RATE_HZ, X), **self._kwargs()).values
