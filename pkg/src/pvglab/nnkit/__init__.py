from .losses import (
    cross_entropy_smoothed,
    cross_entropy_smoothed_grad,
    log_softmax,
    smoothed_targets,
)
from .net import (
    LayerNorm,
    LeakyRelu,
    Linear,
    NetworkSpec,
    Softmax,
    backward,
    forward,
    init_params,
    mlp,
    param_count,
    softmax,
    softmax_input_grad,
    zero_params,
)
from .optim import OptimState, optim_step
from .sampling import gumbel_softmax_st, gumbel_softmax_st_backward

__all__ = [
    "LayerNorm",
    "LeakyRelu",
    "Linear",
    "NetworkSpec",
    "OptimState",
    "Softmax",
    "backward",
    "cross_entropy_smoothed",
    "cross_entropy_smoothed_grad",
    "forward",
    "gumbel_softmax_st",
    "gumbel_softmax_st_backward",
    "init_params",
    "log_softmax",
    "mlp",
    "optim_step",
    "param_count",
    "smoothed_targets",
    "softmax",
    "softmax_input_grad",
    "zero_params",
]
