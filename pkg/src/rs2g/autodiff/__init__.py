from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    clamp_min,
    concat,
    debug_enabled,
    div,
    exp,
    getitem,
    log,
    log_softmax,
    matmul,
    max_,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scalar_divide,
    set_debug,
    sigmoid,
    softmax,
    stack,
    straight_through,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
)
from .params import ParameterSet, read_checkpoint, save_checkpoint, uniform_init
from .optim import Optimizer, clip_global_norm, optimizer_step
from .gradcheck import analytic_grads, check_gradients, max_relative_error, numerical_grad

__all__ = [name for name in dir() if not name.startswith("_")]
