"""Float64 tensors, reverse-mode autodiff, Adam, and gradient checking."""

from .gradcheck import analytic_gradients, finite_diff_check
from .nn import LSTM, MLP, Linear, Module, parameter, reverse_padded, xavier_uniform
from .optim import Adam, AdamState
from .tensor import (
    PROB_FLOOR,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    cross_entropy,
    div,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mse,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    take,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "PROB_FLOOR", "Tensor", "Adam", "AdamState", "Module", "Linear", "MLP", "LSTM",
    "add", "sub", "mul", "div", "neg", "matmul", "tanh", "sigmoid", "relu", "exp", "log",
    "tsum", "mean", "reshape", "transpose", "getitem", "take", "concat", "stack",
    "softmax", "cross_entropy", "mse", "backward", "no_grad", "as_tensor",
    "finite_diff_check", "analytic_gradients", "parameter", "reverse_padded", "xavier_uniform",
]
