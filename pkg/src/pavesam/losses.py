"""Differentiable segmentation losses with analytic per-pixel gradients.

Every loss returns a LossValue carrying both the scalar and d(loss)/d(p̂)
at each pixel, so a training loop can seed backpropagation without an
autograd dependency. Predicted probabilities are clamped to
[EPS, 1 - EPS] before logarithms; gradients are evaluated at the clamped
values (straight-through, so saturated pixels keep a finite pull).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ensure_binary_mask, ensure_probability_mask

EPS = 1e-7


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: np.ndarray  # same shape as the prediction


@dataclass(frozen=True)
class TverskyParams:
    alpha: float = 0.7
    beta: float = 0.3
    gamma: float = 4.0 / 3.0

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def _validated(y, p_hat) -> tuple[np.ndarray, np.ndarray]:
    truth = ensure_binary_mask(y).astype(np.float64)
    pred = ensure_probability_mask(p_hat)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch: truth {truth.shape} vs prediction {pred.shape}")
    return truth, pred


def bce_loss(y, p_hat) -> LossValue:
    """Mean binary cross-entropy: -[y log p̂ + (1-y) log(1-p̂)] averaged over pixels."""
    truth, pred = _validated(y, p_hat)
    p = np.clip(pred, EPS, 1.0 - EPS)
    n = p.size
    value = float(-np.sum(truth * np.log(p) + (1.0 - truth) * np.log(1.0 - p)) / n)
    gradient = (-truth / p + (1.0 - truth) / (1.0 - p)) / n
    return LossValue(value, gradient)


def dice_loss(y, p_hat) -> LossValue:
    """1 - (2*sum(y*p̂) + 1) / (sum(y) + sum(p̂) + 1), sums over all pixels."""
    truth, pred = _validated(y, p_hat)
    num = 2.0 * np.sum(truth * pred) + 1.0
    den = np.sum(truth) + np.sum(pred) + 1.0
    value = float(1.0 - num / den)
    gradient = (num - 2.0 * truth * den) / (den * den)
    return LossValue(value, gradient)


def combined_loss(y, p_hat) -> LossValue:
    """Cross-entropy plus dice, value and gradient both additive."""
    bce = bce_loss(y, p_hat)
    dice = dice_loss(y, p_hat)
    return LossValue(bce.value + dice.value, bce.gradient + dice.gradient)


def _soft_counts(truth: np.ndarray, pred: np.ndarray) -> tuple[float, float, float]:
    tp = float(np.sum(truth * pred))
    fn = float(np.sum(truth * (1.0 - pred)))
    fp = float(np.sum((1.0 - truth) * pred))
    return tp, fn, fp


def tversky_index(y, p_hat, params: TverskyParams) -> float:
    """Soft Tversky overlap TP / (TP + alpha*FN + beta*FP).

    Smoothing follows the dice convention (+1 on the doubled numerator and
    denominator), so alpha = beta = 0.5 reproduces the smoothed dice
    coefficient exactly.
    """
    truth, pred = _validated(y, p_hat)
    tp, fn, fp = _soft_counts(truth, pred)
    return (2.0 * tp + 1.0) / (2.0 * (tp + params.alpha * fn + params.beta * fp) + 1.0)


def focal_tversky_loss(y, p_hat, params: TverskyParams) -> LossValue:
    """(1 - tversky_index)^gamma with the analytic gradient through the index."""
    truth, pred = _validated(y, p_hat)
    tp, fn, fp = _soft_counts(truth, pred)
    num = 2.0 * tp + 1.0
    den = 2.0 * (tp + params.alpha * fn + params.beta * fp) + 1.0
    ti = num / den
    one_minus = 1.0 - ti
    value = float(one_minus**params.gamma)
    # d num/dp = 2y; d den/dp = 2(y - alpha*y + beta*(1-y))
    dnum = 2.0 * truth
    dden = 2.0 * (truth * (1.0 - params.alpha - params.beta) + params.beta)
    dti = (dnum * den - num * dden) / (den * den)
    if one_minus <= 0.0:
        gradient = np.zeros_like(pred)
    else:
        gradient = -params.gamma * one_minus ** (params.gamma - 1.0) * dti
    return LossValue(value, gradient)
