"""Adam and SGD steps over flat per-layer parameter segments."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NumericError


@dataclass
class OptimState:
    """Optimizer algorithm, hyperparameters, and per-segment accumulators.

    Adam hyperparameter defaults follow the usual framework defaults:
    beta1=0.9, beta2=0.999, eps=1e-8.
    """

    lr: float
    algorithm: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.algorithm!r}")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")


def optim_step(params: dict, grads: dict, state: OptimState) -> dict:
    """Apply one update in place on a copy; returns the new ParamSet.

    Raises NumericError (leaving params untouched) if any gradient is
    non-finite. A zero learning rate is the identity on params, though
    moments still advance.
    """
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in segment {key}", where=key)
        if key not in params or params[key].shape != g.shape:
            raise ConfigError(f"gradient segment {key} does not match params")

    state.step += 1
    new_params = {}
    if state.algorithm == "sgd":
        for key, p in params.items():
            g = grads.get(key)
            new_params[key] = p if g is None else p - state.lr * g
        return new_params

    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for key, p in params.items():
        g = grads.get(key)
        if g is None:
            new_params[key] = p
            continue
        m = state.m.get(key)
        v = state.v.get(key)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[key] = m
        state.v[key] = v
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_params[key] = p - state.lr * update
    return new_params
