"""Seeded synthetic stand-in for a video/viewer-response dataset.

Features are mean-reverting random walks sampled at 6 Hz. Clean labels are
sigmoids of a fixed random linear map applied to the trailing-window mean of
the features, so a model with a few seconds of temporal context can fit them
exactly. Observed labels add white noise and short runs where every emotion
drops to zero, then clip to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import LABEL_RATE_HZ, N_EMOTIONS, FeatureSequence, LabelTrack
from .errors import InputError
from .signal_ops import SampledTrack

# correlation time of the feature walks, seconds
_WALK_TAU_S = 4.0
_LOGIT_GAIN = 3.0


@dataclass(frozen=True)
class SyntheticSpec:
    n_videos: int = 8
    duration_s: float = 120.0
    visual_dim: int = 16
    audio_dim: int = 8
    label_smoothness: float = 5.0
    noise_amp: float = 0.1
    dropout_prob: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_videos < 1 or self.visual_dim < 1 or self.audio_dim < 1:
            raise InputError("n_videos and feature dims must be positive")
        if not self.duration_s > 0 or not self.label_smoothness > 0:
            raise InputError("duration_s and label_smoothness must be positive")
        if self.noise_amp < 0:
            raise InputError("noise_amp must be non-negative")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise InputError("dropout_prob must lie in [0, 1]")


class SyntheticTeacher:
    """The fixed map from features to clean labels shared by every video."""

    def __init__(self, spec: SyntheticSpec):
        rng = np.random.default_rng([spec.seed, 0xEE])
        d = spec.visual_dim + spec.audio_dim
        A = rng.normal(size=(N_EMOTIONS, d))
        self.weights = _LOGIT_GAIN * A / np.linalg.norm(A, axis=1, keepdims=True)
        self.bias = rng.uniform(-1.5, 0.5, size=N_EMOTIONS)
        self.window = max(1, int(round(spec.label_smoothness * LABEL_RATE_HZ)))

    def window_mean(self, feats: np.ndarray) -> np.ndarray:
        """Trailing mean over ``window`` rows (fewer at the start)."""
        c = np.cumsum(np.vstack([np.zeros((1, feats.shape[1])), feats]), axis=0)
        T = feats.shape[0]
        hi = np.arange(1, T + 1)
        lo = np.maximum(0, hi - self.window)
        return (c[hi] - c[lo]) / (hi - lo)[:, None]

    def predict(self, fs: FeatureSequence) -> np.ndarray:
        feats = np.hstack([fs.visual, fs.audio]).astype(np.float64)
        logits = self.window_mean(feats) @ self.weights.T + self.bias
        return 1.0 / (1.0 + np.exp(-logits))


def _walk(rng, T, dim):
    a = np.exp(-1.0 / (LABEL_RATE_HZ * _WALK_TAU_S))
    eps = rng.normal(size=(T, dim)) * np.sqrt(1.0 - a * a)
    out = np.empty((T, dim))
    out[0] = rng.normal(size=dim)
    for t in range(1, T):
        out[t] = a * out[t - 1] + eps[t]
    return out


def generate_synthetic(spec: SyntheticSpec, return_clean: bool = False):
    """List of ``(FeatureSequence, LabelTrack)``; with ``return_clean`` a third
    element holds the noiseless label array."""
    teacher = SyntheticTeacher(spec)
    T = int(round(spec.duration_s * LABEL_RATE_HZ))
    if T < 2:
        raise InputError("duration too short for a 6 Hz track")
    ts = np.rint(np.arange(T) * 1000.0 / LABEL_RATE_HZ).astype(np.int64)
    per_sec = int(LABEL_RATE_HZ)
    out = []
    for i in range(spec.n_videos):
        feat_rng = np.random.default_rng([spec.seed, i, 0])
        noise_rng = np.random.default_rng([spec.seed, i, 1])
        drop_rng = np.random.default_rng([spec.seed, i, 2])
        vid = f"syn{spec.seed:04d}_{i:04d}"
        visual = _walk(feat_rng, T, spec.visual_dim).astype(np.float32)
        audio = _walk(feat_rng, T, spec.audio_dim).astype(np.float32)
        fs = FeatureSequence(vid, ts, visual, audio)
        clean = teacher.predict(fs)

        noise = noise_rng.uniform(-1.0, 1.0, size=clean.shape)
        labels = clean + spec.noise_amp * noise
        n_sec = -(-T // per_sec)
        hits = drop_rng.random(n_sec) < spec.dropout_prob
        starts = drop_rng.integers(0, per_sec, size=n_sec)
        lengths = drop_rng.integers(1, per_sec + 1, size=n_sec)
        for s in np.flatnonzero(hits):
            a = s * per_sec + starts[s]
            b = min(s * per_sec + per_sec, a + lengths[s], T)
            a = min(a, T - 1)
            labels[a:max(b, a + 1)] = 0.0
        labels = np.clip(labels, 0.0, 1.0)
        lt = LabelTrack(vid, SampledTrack(LABEL_RATE_HZ, labels, 0.0))
        out.append((fs, lt, clean) if return_clean else (fs, lt))
    return out
