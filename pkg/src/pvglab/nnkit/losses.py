"""Classification losses over raw logits."""

import numpy as np

from ..errors import UsageError
from .net import softmax


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def smoothed_targets(labels: np.ndarray, n_classes: int, smoothing: float) -> np.ndarray:
    if not 0.0 <= smoothing < 1.0:
        raise UsageError(f"smoothing must be in [0, 1), got {smoothing}")
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise UsageError("label out of range")
    targets = np.full((labels.shape[0], n_classes), smoothing / n_classes)
    targets[np.arange(labels.shape[0]), labels] += 1.0 - smoothing
    return targets


def cross_entropy_smoothed(logits: np.ndarray, labels, smoothing: float = 0.0) -> float:
    """Mean natural-log cross entropy against label-smoothed targets."""
    loss, _ = cross_entropy_smoothed_grad(logits, labels, smoothing)
    return loss


def cross_entropy_smoothed_grad(logits: np.ndarray, labels, smoothing: float = 0.0):
    """Returns (mean loss, gradient of the mean loss w.r.t. logits)."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if logits.shape[0] != labels.shape[0]:
        raise UsageError("logits and labels have mismatched batch sizes")
    targets = smoothed_targets(labels, logits.shape[1], smoothing)
    logp = log_softmax(logits)
    loss = float(-(targets * logp).sum(axis=1).mean())
    grad = (softmax(logits) - targets) / logits.shape[0]
    return loss, grad
