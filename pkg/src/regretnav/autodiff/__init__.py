"""Minimal reverse-mode automatic differentiation over dense numpy tensors."""

from .gradcheck import GradCheckReport, grad_check, numeric_grad, relative_error
from .ops import (
    RunningStats,
    add,
    batch_standardize,
    concat,
    dropout,
    embedding,
    index,
    inner,
    log_softmax,
    lstm_cell,
    lstm_fused,
    matmul,
    mul,
    pick,
    relu,
    reshape,
    row_sum,
    scale,
    sigmoid,
    softmax,
    square,
    sub,
    tanh,
    total,
    weighted_sum,
)
from .tensor import ShapeError, Tape, Tensor, backward, constant, detach, parameter

__all__ = [
    "GradCheckReport", "RunningStats", "ShapeError", "Tape", "Tensor",
    "add", "backward", "batch_standardize", "concat", "constant", "detach", "dropout",
    "embedding", "grad_check", "index", "inner", "log_softmax", "lstm_cell", "lstm_fused",
    "matmul", "mul", "numeric_grad", "parameter", "pick", "relative_error", "relu",
    "reshape", "row_sum", "scale", "sigmoid", "softmax", "square", "sub", "tanh", "total",
    "weighted_sum",
]
