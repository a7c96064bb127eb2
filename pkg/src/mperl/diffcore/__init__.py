"""Minimal reverse-mode differentiation core used by the model and the loss."""

from . import special
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    concat,
    digamma,
    div,
    exp,
    lgamma,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    ones_like,
    relational_contract,
    relational_expand,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    sum_,
    take_rows,
    transpose,
)

__all__ = [
    "Adam", "AdamState", "Tensor", "adam_step", "add", "as_tensor", "backward", "clamp",
    "concat", "digamma", "div", "exp", "lgamma", "log", "log_softmax", "matmul", "mean",
    "mul", "ones_like", "relational_contract", "relational_expand", "relu", "reshape",
    "sigmoid", "softmax", "special", "sub", "sum_", "take_rows", "transpose",
]
