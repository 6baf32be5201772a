"""Minimal dense-tensor arithmetic with reverse-mode autodiff."""

from .gradcheck import GradCheckReport, ParamReport, grad_check
from .ops import (
    add,
    constant,
    dropout,
    embedding,
    layer_norm,
    matmul,
    mul,
    parameter,
    permute,
    relu,
    reshape,
    scale,
    silu,
    softmax_cross_entropy,
    softmax_last,
    sum_all,
    transpose2d,
)
from .tensor import Tape, Tensor, active_tape, backward, parameters_zero_grad

__all__ = [
    "GradCheckReport",
    "ParamReport",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "backward",
    "constant",
    "dropout",
    "embedding",
    "grad_check",
    "layer_norm",
    "matmul",
    "mul",
    "parameter",
    "parameters_zero_grad",
    "permute",
    "relu",
    "reshape",
    "scale",
    "silu",
    "softmax_cross_entropy",
    "softmax_last",
    "sum_all",
    "transpose2d",
]
