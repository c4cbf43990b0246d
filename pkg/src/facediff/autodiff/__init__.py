from .tensor import (
    Tensor, Parameter, tensor, zeros, ones, concat, stack, pad_axis, where,
    maximum, minimum, no_grad, finite_checks,
)
from .nn import (
    relu, silu, gelu, softmax, linear, conv1d, conv2d, group_norm, attention,
    dropout,
)
from .optim import AdamState, init_adam, adam_step, LrSchedule, onecycle_lr
from .gradcheck import check_gradients, numerical_grad

__all__ = [
    "Tensor", "Parameter", "tensor", "zeros", "ones", "concat", "stack",
    "pad_axis", "where", "maximum", "minimum", "no_grad", "finite_checks",
    "relu", "silu", "gelu", "softmax", "linear", "conv1d", "conv2d",
    "group_norm", "attention", "dropout",
    "AdamState", "init_adam", "adam_step", "LrSchedule", "onecycle_lr",
    "check_gradients", "numerical_grad",
]
