"""Discrete token sampling with a straight-through gradient path.

The forward value of a sampled message is the hard one-hot vector; the
gradient of anything downstream flows through the soft (tempered softmax
of noise-perturbed logits) sample instead.  Tokens masked with a -inf
logit get exactly zero probability and exactly zero gradient.
"""

import numpy as np

from ..errors import MaskError, UsageError
from .net import softmax, softmax_input_grad


def gumbel_softmax_st(logits: np.ndarray, temperature: float, rng: np.random.Generator):
    """Sample one token per row.

    Returns (soft, hard): ``soft`` are the relaxed probabilities the
    gradient flows through, ``hard`` is the exact one-hot sample used as
    the forward value. Finite logits required except for -inf mask
    sentinels; fully masked rows raise MaskError.
    """
    if temperature <= 0:
        raise UsageError("temperature must be > 0")
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    masked = np.isneginf(logits)
    if np.any(~np.isfinite(logits) & ~masked):
        raise UsageError("logits must be finite (or -inf for masked tokens)")
    if np.any(masked.all(axis=1)):
        raise MaskError("a row has every token masked")

    u = rng.random(logits.shape)
    gumbel = -np.log(-np.log(u))
    perturbed = np.where(masked, -np.inf, (logits + gumbel) / temperature)
    soft = softmax(perturbed)
    hard = np.zeros_like(soft)
    hard[np.arange(soft.shape[0]), np.argmax(perturbed, axis=1)] = 1.0
    return soft, hard


def gumbel_softmax_st_backward(
    soft: np.ndarray, temperature: float, upstream: np.ndarray
) -> np.ndarray:
    """Gradient w.r.t. the pre-noise logits under the straight-through rule."""
    return softmax_input_grad(soft, upstream) / temperature
