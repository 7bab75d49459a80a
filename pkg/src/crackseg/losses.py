"""Training losses for imbalanced binary segmentation."""

from __future__ import annotations

import numpy as np

from .errors import DataError

# Floor for probabilities inside log() so a confident miss stays finite.
LOG_EPS = 1e-7
# Smoothing for the dice ratio so empty-vs-empty is a perfect 0 loss.
DICE_EPS = 1e-6


def _check_pair(p: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise DataError(f"dimension mismatch: {p.shape} vs {y.shape}")
    return p, y


def focal_loss(p: np.ndarray, y: np.ndarray, gamma: float = 4.0) -> float:
    """Mean of -(1 - p_t)^gamma * log(p_t) with p_t = p where y=1, else 1-p.

    ``gamma`` down-weights well-classified pixels; at gamma=0 this is plain
    cross-entropy.
    """
    p, y = _check_pair(p, y)
    if p.size == 0:
        raise DataError("empty input")
    if p.min() < 0.0 or p.max() > 1.0:
        raise DataError("probabilities must lie in [0, 1]")
    p_t = np.where(y == 1, p, 1.0 - p)
    p_t = np.maximum(p_t, LOG_EPS)
    return float(np.mean(-((1.0 - p_t) ** gamma) * np.log(p_t)))


def dice_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Soft dice loss 1 - 2*sum(p*g) / (sum(p^2) + sum(g^2)), smoothed."""
    p, g = _check_pair(pred, target)
    num = 2.0 * float(np.sum(p * g)) + DICE_EPS
    den = float(np.sum(p * p)) + float(np.sum(g * g)) + DICE_EPS
    return 1.0 - num / den


def dice_focal_loss(
    p: np.ndarray,
    y: np.ndarray,
    lambda_dice: float = 0.8,
    lambda_focal: float = 0.2,
    gamma: float = 4.0,
) -> float:
    """Weighted sum of dice and focal losses on the same prediction."""
    return lambda_dice * dice_loss(p, y) + lambda_focal * focal_loss(p, y, gamma)
