"""Tensor numerics: arrays with reverse-mode gradients and the primitives used by the model."""

from . import ops
from .gradcheck import check_gradients, directional_error, numeric_grad, relative_error
from .ops import (
    RESIZE_MODES,
    concat,
    conv2d,
    gelu,
    layer_norm,
    log_softmax,
    matmul,
    relu,
    reshape,
    resize2d,
    scaled_dot_product_attention,
    sigmoid,
    softmax,
    transpose,
)
from .rng import RngStream
from .tensor import Tensor, as_tensor, backward, grad_enabled, grad_of, no_grad, set_finite_check

__all__ = [
    "RESIZE_MODES", "RngStream", "Tensor", "as_tensor", "backward", "check_gradients", "concat",
    "conv2d", "directional_error", "gelu", "grad_enabled", "grad_of", "layer_norm", "log_softmax", "matmul",
    "no_grad", "numeric_grad", "ops", "relative_error", "relu", "reshape", "resize2d",
    "scaled_dot_product_attention", "set_finite_check", "sigmoid", "softmax", "transpose",
]
