"""Minimal float64 tensor library with reverse-mode differentiation."""
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    div,
    exp,
    gelu,
    getitem,
    is_grad_enabled,
    l2_normalize,
    layer_norm,
    log,
    log_sigmoid,
    matmul,
    maximum,
    mean,
    minimum,
    mul,
    no_grad,
    power,
    reshape,
    sigmoid,
    sin,
    cos,
    softmax,
    sqrt,
    sub,
    tabs,
    take,
    transpose,
    tsum,
)
from .optim import AdamW, adamw_step
from .checkpoint import CheckpointError, load_arrays, load_checkpoint, save_arrays

__all__ = [
    "AdamW", "CheckpointError", "load_checkpoint", "ShapeError", "Tensor", "adamw_step", "add", "as_tensor", "backward",
    "broadcast_to", "concat", "div", "exp", "gelu", "getitem", "is_grad_enabled", "l2_normalize",
    "layer_norm", "load_arrays", "log", "log_sigmoid", "matmul", "maximum", "mean", "minimum", "mul",
    "no_grad", "power", "reshape", "save_arrays", "sigmoid", "sin", "cos", "softmax", "sqrt", "sub", "tabs", "take",
    "transpose", "tsum",
]
