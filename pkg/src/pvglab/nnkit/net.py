"""Minimal dense-network engine with hand-rolled reverse-mode gradients.

Supports exactly the layer zoo the agents need: linear, leaky ReLU,
layer norm (with learnable gain/bias), and softmax.  Arrays are plain
float64 numpy ndarrays, batch-first.  ``forward`` returns a cache that
``backward`` consumes; backward also returns the gradient with respect
to the network input so losses can be chained through a frozen network
(e.g. from a verifier's loss back into the message that fed it).
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import ConfigError, NumericError, UsageError


@dataclass(frozen=True)
class Linear:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class LeakyRelu:
    slope: float = 0.01


@dataclass(frozen=True)
class LayerNorm:
    dim: int
    eps: float = 1e-5


@dataclass(frozen=True)
class Softmax:
    pass


LayerSpec = Union[Linear, LeakyRelu, LayerNorm, Softmax]


@dataclass(frozen=True)
class NetworkSpec:
    """An ordered stack of layers with compatible dimensions."""

    layers: tuple

    def __post_init__(self):
        dim = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Linear):
                if layer.in_dim <= 0 or layer.out_dim <= 0:
                    raise ConfigError(f"layer {i}: linear dims must be positive")
                if dim is not None and dim != layer.in_dim:
                    raise ConfigError(
                        f"layer {i}: linear expects {layer.in_dim} features, got {dim}"
                    )
                dim = layer.out_dim
            elif isinstance(layer, LeakyRelu):
                if not 0.0 < layer.slope < 1.0:
                    raise ConfigError(f"layer {i}: leaky slope must be in (0, 1)")
            elif isinstance(layer, LayerNorm):
                if layer.eps <= 0.0:
                    raise ConfigError(f"layer {i}: layer_norm eps must be > 0")
                if dim is not None and dim != layer.dim:
                    raise ConfigError(
                        f"layer {i}: layer_norm over {layer.dim} features, got {dim}"
                    )
                dim = layer.dim
            elif not isinstance(layer, Softmax):
                raise ConfigError(f"layer {i}: unknown layer kind {layer!r}")

    @property
    def in_dim(self) -> int:
        for layer in self.layers:
            if isinstance(layer, Linear):
                return layer.in_dim
            if isinstance(layer, LayerNorm):
                return layer.dim
        raise ConfigError("spec has no dimensioned layer")

    @property
    def out_dim(self) -> int:
        for layer in reversed(self.layers):
            if isinstance(layer, Linear):
                return layer.out_dim
            if isinstance(layer, LayerNorm):
                return layer.dim
        raise ConfigError("spec has no dimensioned layer")


def mlp(dims, slope: float = 0.01, layer_norm: bool = True) -> NetworkSpec:
    """Fully connected stack: linear -> norm -> leaky for each hidden layer."""
    layers = []
    for i in range(len(dims) - 1):
        layers.append(Linear(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            if layer_norm:
                layers.append(LayerNorm(dims[i + 1]))
            layers.append(LeakyRelu(slope))
    return NetworkSpec(tuple(layers))


# A ParamSet maps layer index -> flat float64 vector for layers that carry
# parameters (linear: weight then bias; layer_norm: gain then bias).

def segment_size(layer: LayerSpec) -> int:
    if isinstance(layer, Linear):
        return layer.in_dim * layer.out_dim + layer.out_dim
    if isinstance(layer, LayerNorm):
        return 2 * layer.dim
    return 0


def param_count(spec: NetworkSpec) -> int:
    return sum(segment_size(l) for l in spec.layers)


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> dict:
    """Uniform(-1/sqrt(fan_in)) linear init; layer norm starts at identity."""
    params = {}
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Linear):
            bound = 1.0 / np.sqrt(layer.in_dim)
            w = rng.uniform(-bound, bound, size=layer.in_dim * layer.out_dim)
            b = rng.uniform(-bound, bound, size=layer.out_dim)
            params[i] = np.concatenate([w, b])
        elif isinstance(layer, LayerNorm):
            params[i] = np.concatenate([np.ones(layer.dim), np.zeros(layer.dim)])
    return params


def zero_params(spec: NetworkSpec) -> dict:
    return {
        i: np.zeros(segment_size(l))
        for i, l in enumerate(spec.layers)
        if segment_size(l)
    }


def check_params(spec: NetworkSpec, params: dict) -> None:
    for i, layer in enumerate(spec.layers):
        size = segment_size(layer)
        if size == 0:
            continue
        if i not in params:
            raise ConfigError(f"layer {i}: missing parameter segment")
        if params[i].shape != (size,):
            raise ConfigError(
                f"layer {i}: segment has {params[i].shape}, expected ({size},)"
            )
        if not np.all(np.isfinite(params[i])):
            raise NumericError(f"layer {i}: non-finite parameters", where=i)


def _linear_wb(layer: Linear, seg: np.ndarray):
    w = seg[: layer.in_dim * layer.out_dim].reshape(layer.in_dim, layer.out_dim)
    b = seg[layer.in_dim * layer.out_dim :]
    return w, b


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax; -inf entries get exactly zero probability."""
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    z = e.sum(axis=-1, keepdims=True)
    return e / z


def softmax_input_grad(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of softmax given its output probabilities."""
    inner = np.sum(upstream * probs, axis=-1, keepdims=True)
    return probs * (upstream - inner)


def forward(spec: NetworkSpec, params: dict, batch: np.ndarray):
    """Run the network; returns (output, cache) with cache feeding backward."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"batch must be 2-d, got shape {x.shape}")
    if x.shape[1] != spec.in_dim:
        raise ConfigError(
            f"batch has {x.shape[1]} features, network expects {spec.in_dim}"
        )
    check_params(spec, params)
    cache = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Linear):
            w, b = _linear_wb(layer, params[i])
            y = x @ w + b
            cache.append(("linear", x))
        elif isinstance(layer, LeakyRelu):
            pos = x >= 0
            y = np.where(pos, x, layer.slope * x)
            cache.append(("leaky", pos))
        elif isinstance(layer, LayerNorm):
            mu = x.mean(axis=1, keepdims=True)
            var = x.var(axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(var + layer.eps)
            xhat = (x - mu) * inv
            gamma = params[i][: layer.dim]
            beta = params[i][layer.dim :]
            y = gamma * xhat + beta
            cache.append(("lnorm", (xhat, inv)))
        else:  # Softmax
            y = softmax(x)
            cache.append(("softmax", y))
        if not np.all(np.isfinite(y)):
            raise NumericError(f"non-finite activations after layer {i}", where=i)
        x = y
    return x, cache


def backward(spec: NetworkSpec, params: dict, cache, upstream: np.ndarray):
    """Backprop ``upstream`` = dL/d(output). Returns (grad ParamSet, dL/d(input))."""
    if len(cache) != len(spec.layers):
        raise UsageError("cache does not match this network spec")
    dy = np.asarray(upstream, dtype=np.float64)
    grads = {}
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        kind, saved = cache[i]
        if isinstance(layer, Linear):
            if kind != "linear":
                raise UsageError(f"cache entry {i} is {kind}, expected linear")
            x = saved
            w, _ = _linear_wb(layer, params[i])
            dw = x.T @ dy
            db = dy.sum(axis=0)
            grads[i] = np.concatenate([dw.ravel(), db])
            dy = dy @ w.T
        elif isinstance(layer, LeakyRelu):
            pos = saved
            dy = np.where(pos, dy, layer.slope * dy)
        elif isinstance(layer, LayerNorm):
            xhat, inv = saved
            gamma = params[i][: layer.dim]
            dgamma = (dy * xhat).sum(axis=0)
            dbeta = dy.sum(axis=0)
            grads[i] = np.concatenate([dgamma, dbeta])
            dxhat = dy * gamma
            n = layer.dim
            dy = (
                inv
                / n
                * (
                    n * dxhat
                    - dxhat.sum(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
                )
            )
        else:  # Softmax
            dy = softmax_input_grad(saved, dy)
    return grads, dy
