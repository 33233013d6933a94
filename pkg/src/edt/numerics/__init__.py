"""Dense-tensor kernel: autodiff tensors, seeded RNG, MAC instrumentation."""

from .opcount import OpCounter, active_counter, add_macs, counting
from .rng import Rng
from .tensor import (
    Tensor,
    concat,
    gather,
    gelu,
    grad,
    layernorm,
    matmul,
    mse,
    no_grad,
    set_finite_checks,
    silu,
    softmax_rows,
    tensor,
    where,
)

__all__ = [
    "OpCounter",
    "Rng",
    "Tensor",
    "active_counter",
    "add_macs",
    "concat",
    "counting",
    "gather",
    "gelu",
    "grad",
    "layernorm",
    "matmul",
    "mse",
    "no_grad",
    "set_finite_checks",
    "silu",
    "softmax_rows",
    "tensor",
    "where",
]
