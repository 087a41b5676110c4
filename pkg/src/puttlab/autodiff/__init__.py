"""Minimal reverse-mode autodiff: exactly the pieces the two networks need."""

from .conv import conv1d, conv_output_length, pixel_shuffle1d, subpixel_conv1d, transposed_conv1d
from .layers import BN_EPS, BN_MOMENTUM, batch_norm, bilstm, lstm, prelu
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    grad_enabled,
    mse,
    no_grad,
    parameter,
    relu,
    sigmoid,
    stack,
    tanh,
)

__all__ = [
    "BN_EPS",
    "BN_MOMENTUM",
    "Tensor",
    "as_tensor",
    "batch_norm",
    "bilstm",
    "concat",
    "conv1d",
    "conv_output_length",
    "grad_enabled",
    "lstm",
    "mse",
    "no_grad",
    "parameter",
    "pixel_shuffle1d",
    "prelu",
    "relu",
    "sigmoid",
    "stack",
    "subpixel_conv1d",
    "tanh",
    "transposed_conv1d",
]
