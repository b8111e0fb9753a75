"""fp64 tensors with reverse-mode autodiff, a gradient oracle and checkpoint I/O."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .functional import (
    conv2d,
    cosine_similarity,
    cross_entropy_rows,
    gelu,
    l2_normalize,
    layernorm,
    log_softmax,
    mean_pool,
    softmax,
)
from .gradcheck import grad_check
from .tensor import (
    NumericError,
    OpCounter,
    ShapeError,
    Tensor,
    broadcast_to,
    clamp_min,
    concat,
    count_ops,
    exp,
    gather_rows,
    log,
    matmul,
    no_grad,
    sqrt,
    tanh,
)

__all__ = [
    "CheckpointError",
    "NumericError",
    "OpCounter",
    "ShapeError",
    "Tensor",
    "broadcast_to",
    "clamp_min",
    "concat",
    "conv2d",
    "cosine_similarity",
    "count_ops",
    "cross_entropy_rows",
    "exp",
    "gather_rows",
    "gelu",
    "grad_check",
    "l2_normalize",
    "layernorm",
    "load_checkpoint",
    "log",
    "log_softmax",
    "matmul",
    "mean_pool",
    "no_grad",
    "save_checkpoint",
    "softmax",
    "sqrt",
    "tanh",
]
