"""Segmentation losses and overlap metrics.

The hybrid training loss is binary cross-entropy plus ``(1 - dice)``.
Dice is computed on soft values during training; ``jaccard`` works on
binary masks and is what gets reported.
"""
from __future__ import annotations

import numpy as np

EPS = 1e-7


def _check_shapes(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _check_binary(y):
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("target must be binary (0/1)")


def bce(pred, target):
    """Mean binary cross-entropy with predictions clamped to [EPS, 1-EPS]."""
    p, y = _check_shapes(pred, target)
    _check_binary(y)
    p = np.clip(p, EPS, 1.0 - EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def bce_grad(pred, target):
    p, y = _check_shapes(pred, target)
    inside = (p > EPS) & (p < 1.0 - EPS)
    pc = np.clip(p, EPS, 1.0 - EPS)
    g = -(y / pc - (1.0 - y) / (1.0 - pc)) / p.size
    return np.where(inside, g, 0.0)


def dice(a, b):
    """Sorensen-Dice ``2 sum(a*b) / (sum(a^2) + sum(b^2))``; 1 when both are empty."""
    a, b = _check_shapes(a, b)
    denom = np.sum(a * a) + np.sum(b * b)
    if denom == 0:
        return 1.0
    return float(2.0 * np.sum(a * b) / denom)


def dice_grad(a, b):
    """Gradient of ``dice(a, b)`` with respect to ``a``."""
    a, b = _check_shapes(a, b)
    denom = np.sum(a * a) + np.sum(b * b)
    if denom == 0:
        return np.zeros_like(a)
    d = 2.0 * np.sum(a * b) / denom
    return (2.0 * b - 2.0 * d * a) / denom


def hybrid_loss(pred, target, dice_weight=1.0):
    """``bce + dice_weight * (1 - dice)``."""
    return bce(pred, target) + dice_weight * (1.0 - dice(pred, target))


def hybrid_loss_grad(pred, target, dice_weight=1.0):
    return bce_grad(pred, target) - dice_weight * dice_grad(pred, target)


def jaccard(a, b):
    """Intersection over union of two binary masks; 1 when both are empty."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a) + np.count_nonzero(b) - inter
    if union == 0:
        return 1.0
    return inter / union


def binary_dice(a, b):
    return dice(np.asarray(a).astype(bool), np.asarray(b).astype(bool))
