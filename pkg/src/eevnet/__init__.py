"""Evoked-expression prediction from precomputed video and audio features."""

__version__ = "1.0.0"

from .dataio import Checkpoint, FeatureSequence, LabelTrack  # noqa: E402
from .estimator import EvokedExpressionRegressor, LabelFilter  # noqa: E402
from .model import ModelConfig, init_params, model_backward, model_forward  # noqa: E402
from .signal_ops import SampledTrack  # noqa: E402
from .trainer import PredictionStrategy, TrainConfig, predict_video, train  # noqa: E402

__all__ = [
    "Checkpoint",
    "EvokedExpressionRegressor",
    "FeatureSequence",
    "LabelFilter",
    "LabelTrack",
    "ModelConfig",
    "PredictionStrategy",
    "SampledTrack",
    "TrainConfig",
    "init_params",
    "model_backward",
    "model_forward",
    "predict_video",
    "train",
]
