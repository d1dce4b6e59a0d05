"""Numpy-backed tensors, autodiff, layers, and weight IO."""
from . import functional
from .gradcheck import GradcheckResult, gradcheck
from .module import (Conv2d, Identity, Linear, LayerNorm, Module, ModuleList,
                     trunc_normal, uniform_fan_in)
from .serialize import load_weights, save_weights
from .tensor import (DimensionError, Tensor, arctan, clamp_min, concat, exp,
                     gelu, is_grad_enabled, log, matmul, maximum, minimum,
                     mish, no_grad, sigmoid, silu, softplus, sqrt, stack,
                     tanh, where_mask)

__all__ = [
    "Tensor", "DimensionError", "no_grad", "is_grad_enabled",
    "exp", "log", "sqrt", "tanh", "sigmoid", "silu", "mish", "gelu",
    "softplus", "arctan", "maximum", "minimum", "clamp_min", "matmul",
    "concat", "stack", "where_mask",
    "Module", "ModuleList", "Identity", "Linear", "Conv2d", "LayerNorm",
    "trunc_normal", "uniform_fan_in",
    "gradcheck", "GradcheckResult", "save_weights", "load_weights",
    "functional",
]
