"""Correlation metrics with population (1/n) moments.

A video scores the mean over all 15 emotions of the per-emotion Pearson
on the 6 Hz tracks; a dataset scores the unweighted mean over videos.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateVarianceError, DimensionError, InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MomentSummary:
    mean_x: float
    mean_y: float
    var_x: float
    var_y: float
    cov_xy: float
    n: int


@dataclass(frozen=True)
class ScoreReport:
    per_emotion: np.ndarray
    per_video_mean: float
    n_valid_emotions: int


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DimensionError(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 2:
        raise InputError("need at least 2 samples")
    return x, y


def moments(x, y) -> MomentSummary:
    x, y = _pair(x, y)
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    return MomentSummary(
        float(mx), float(my), float(np.mean(dx * dx)), float(np.mean(dy * dy)),
        float(np.mean(dx * dy)), x.size,
    )


def _constant(a, axis=0):
    return np.ptp(a, axis=axis) == 0


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    if _constant(x) or _constant(y):
        raise DegenerateVarianceError("pearson undefined for a constant series")
    m = moments(x, y)
    r = m.cov_xy / np.sqrt(m.var_x * m.var_y)
    return float(np.clip(r, -1.0, 1.0))


def ccc_columns(x, y, with_grad: bool = False):
    """Per-column concordance correlation of (T, C) arrays.

    Columns where either input is constant get 0 and zero gradient. With
    ``with_grad`` also returns d ccc / d x, shape (T, C).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 1:
        x, y = x[:, None], y[:, None]
    T = x.shape[0]
    if T < 2:
        raise InputError("CCC needs at least 2 samples")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    dx, dy = x - mx, y - my
    vx = np.mean(dx * dx, axis=0)
    vy = np.mean(dy * dy, axis=0)
    cov = np.mean(dx * dy, axis=0)
    valid = ~(_constant(x) | _constant(y))
    num = 2.0 * cov
    den = vx + vy + (mx - my) ** 2
    safe = np.where(valid, den, 1.0)
    ccc = np.where(valid, num / safe, 0.0)
    if not with_grad:
        return ccc
    d_num = 2.0 * dy / T
    d_den = 2.0 * dx / T + 2.0 * (mx - my) / T
    grad = (d_num * safe - num * d_den) / (safe * safe)
    grad = np.where(valid, grad, 0.0)
    return ccc, grad


def ccc(x, y) -> float:
    x, y = _pair(x, y)
    return float(ccc_columns(x, y)[0])


def _values(track):
    return track.values if hasattr(track, "values") else np.asarray(track, dtype=np.float64)


def score_video(pred, label) -> ScoreReport:
    """Per-emotion Pearson between two tracks (or (T, C) arrays)."""
    p, y = _values(pred), _values(label)
    if p.shape[1:] != y.shape[1:]:
        raise DimensionError(f"channel mismatch {p.shape} vs {y.shape}")
    T = min(p.shape[0], y.shape[0])
    if p.shape[0] != y.shape[0]:
        logger.info("score_video: truncating %d/%d rows to %d", p.shape[0], y.shape[0], T)
    if T < 2:
        raise InputError("score_video needs at least 2 rows")
    p, y = p[:T], y[:T]
    valid = ~(_constant(p) | _constant(y))
    dp, dy = p - p.mean(axis=0), y - y.mean(axis=0)
    cov = np.mean(dp * dy, axis=0)
    denom = np.sqrt(np.mean(dp * dp, axis=0) * np.mean(dy * dy, axis=0))
    r = np.where(valid, cov / np.where(valid, denom, 1.0), 0.0)
    r = np.clip(r, -1.0, 1.0)
    return ScoreReport(r, float(r.mean()), int(valid.sum()))


def score_dataset(reports: Sequence[ScoreReport]) -> float:
    if len(reports) == 0:
        raise InputError("cannot score an empty dataset")
    # fsum is exactly rounded, so the result is independent of list order
    return math.fsum(r.per_video_mean for r in reports) / len(reports)
