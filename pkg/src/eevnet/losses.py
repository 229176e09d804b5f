"""Training objectives with analytic gradients.

Each loss takes predictions and labels shaped (T, 15) for one clip or
(B, T, 15) for a batch of clips; batch values are the mean of per-clip values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .metrics import ccc_columns

LOSS_KINDS = ("l1", "kl", "ccc")


@dataclass
class LossReport:
    value: float
    d_pred: np.ndarray


def _check(pred, label):
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise DimensionError(f"pred {pred.shape} vs label {label.shape}")
    if pred.ndim not in (2, 3):
        raise DimensionError("expected (T, C) or (B, T, C)")
    return pred, label


def l1_loss(pred, label) -> LossReport:
    pred, label = _check(pred, label)
    diff = pred - label
    return LossReport(float(np.mean(np.abs(diff))), np.sign(diff) / diff.size)


def kl_loss(pred, label, eps: float = 1e-6) -> LossReport:
    """Mean per-entry Bernoulli KL(label || pred), pred clamped to [eps, 1-eps]."""
    pred, y = _check(pred, label)
    if not 0.0 < eps <= 1e-3:
        raise InputError("eps must lie in (0, 1e-3]")
    q = np.clip(pred, eps, 1.0 - eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / q), 0.0)
        neg = np.where(y < 1, (1.0 - y) * np.log(np.where(y < 1, 1.0 - y, 1.0) / (1.0 - q)), 0.0)
    per_entry = pos + neg
    grad = (-y / q + (1.0 - y) / (1.0 - q)) / per_entry.size
    inside = (pred >= eps) & (pred <= 1.0 - eps)
    grad = np.where(inside, grad, 0.0)
    return LossReport(float(per_entry.mean()), grad)


def ccc_loss(pred, label) -> LossReport:
    """Mean over clips and emotions of ``1 - ccc``."""
    pred, label = _check(pred, label)
    if pred.shape[-2] < 2:
        raise InputError("ccc_loss needs T >= 2")
    batched = pred.ndim == 3
    P = pred if batched else pred[None]
    Y = label if batched else label[None]
    B, _, C = P.shape
    total = 0.0
    grad = np.empty_like(P)
    for i in range(B):
        c, g = ccc_columns(P[i], Y[i], with_grad=True)
        total += float(np.sum(1.0 - c))
        grad[i] = -g / (B * C)
    value = total / (B * C)
    return LossReport(value, grad if batched else grad[0])


def compute_loss(kind: str, pred, label) -> LossReport:
    if kind == "l1":
        return l1_loss(pred, label)
    if kind == "kl":
        return kl_loss(pred, label)
    if kind == "ccc":
        return ccc_loss(pred, label)
    raise InputError(f"unknown loss {kind!r}; expected one of {LOSS_KINDS}")
