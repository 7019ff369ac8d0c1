from .backend import BACKEND_NAME, kernels
from .checkpoint import CheckpointError, load_checkpoint, load_into, save_checkpoint
from .core import (
    PRIMITIVES,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    active_tape,
    add,
    affine,
    bce_with_logits,
    concat,
    constant,
    div,
    dot,
    entropy_from_logits,
    exp,
    forward_primitive,
    gradcheck,
    gumbel_sample,
    log,
    log_softmax,
    logsumexp,
    matmul,
    mean,
    mean0,
    mul,
    neg,
    no_tape,
    normal_sample,
    pick,
    row,
    sigmoid,
    slice_vec,
    softmax,
    softplus,
    sqrt,
    square,
    stack,
    straight_through_onehot,
    sub,
    sum0,
    sum_,
    tanh,
)

__all__ = [
    "BACKEND_NAME",
    "CheckpointError",
    "PRIMITIVES",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "active_tape",
    "add",
    "affine",
    "bce_with_logits",
    "concat",
    "constant",
    "div",
    "dot",
    "entropy_from_logits",
    "exp",
    "forward_primitive",
    "gradcheck",
    "gumbel_sample",
    "kernels",
    "load_checkpoint",
    "load_into",
    "log",
    "log_softmax",
    "logsumexp",
    "matmul",
    "mean",
    "mean0",
    "mul",
    "neg",
    "no_tape",
    "normal_sample",
    "pick",
    "row",
    "save_checkpoint",
    "sigmoid",
    "slice_vec",
    "softmax",
    "softplus",
    "sqrt",
    "square",
    "stack",
    "straight_through_onehot",
    "sub",
    "sum0",
    "sum_",
    "tanh",
]
