from .core import (
    ActivationRecorder,
    ContractError,
    DimensionError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    cross_entropy,
    elementwise_mul,
    exp,
    group_avg,
    group_max,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    per_sample_backward,
    pick,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    square,
    stack,
    sub,
    take,
    tanh,
)
from .core import sum as tsum
from .gradcheck import finite_diff_grad, max_relative_error
from .optim import SGD, Adam, AdamState, PoisonedGradientError, adam_step, cosine_lr, sgd_step
from .params import ARCH, WEIGHTS, CheckpointFormatError, ParamStore, load_checkpoint, save_checkpoint

__all__ = [
    "ActivationRecorder", "ContractError", "DimensionError", "Tape", "Tensor", "add", "as_tensor",
    "backward", "concat", "cross_entropy", "elementwise_mul", "exp", "group_avg", "group_max", "log",
    "log_softmax", "matmul", "mean", "mul", "per_sample_backward", "pick", "relu", "reshape", "scale",
    "sigmoid", "softmax", "square", "stack", "sub", "take", "tanh", "tsum", "finite_diff_grad",
    "max_relative_error", "SGD", "Adam", "AdamState", "PoisonedGradientError", "adam_step", "cosine_lr",
    "sgd_step", "ARCH", "WEIGHTS", "CheckpointFormatError", "ParamStore", "load_checkpoint",
    "save_checkpoint",
]
