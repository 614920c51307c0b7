"""Deterministic float64 numerics: tensors, autodiff, layers, Adam, RNG."""

from .gradcheck import GradCheckReport, gradient_check
from .layers import (
    BatchNormParams,
    LstmLayerParams,
    batchnorm_init,
    bn_dropout_act,
    forward_linear,
    lstm_forward,
    lstm_init,
)
from .optim import AdamConfig, ParamGroup, adam_step
from .rng import RngState, uniform_init
from .tensor import (
    Tensor,
    as_tensor,
    backward,
    concat,
    custom_op,
    is_grad_enabled,
    matmul,
    no_grad,
    relu,
    reshape,
    set_debug_checks,
    sigmoid,
    stack,
    tabs,
    tanh,
    take,
    tmean,
    tsqrt,
    tsum,
)

__all__ = [
    "AdamConfig",
    "BatchNormParams",
    "GradCheckReport",
    "LstmLayerParams",
    "ParamGroup",
    "RngState",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "batchnorm_init",
    "bn_dropout_act",
    "concat",
    "custom_op",
    "forward_linear",
    "gradient_check",
    "is_grad_enabled",
    "lstm_forward",
    "lstm_init",
    "matmul",
    "no_grad",
    "relu",
    "reshape",
    "set_debug_checks",
    "sigmoid",
    "stack",
    "tabs",
    "tanh",
    "take",
    "tmean",
    "tsqrt",
    "tsum",
    "uniform_init",
]
