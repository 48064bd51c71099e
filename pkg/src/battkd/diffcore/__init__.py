from .checkpoint import (CheckpointError, CheckpointVersionError, load_checkpoint,
                         save_checkpoint)
from .gradcheck import grad_check
from .nn import LayerNorm, Linear, Module, init_weight
from .optim import AdamState, adam_step
from .tensor import (DTYPE, Parameter, ShapeError, Tensor, add, clamp_min, concat, dropout,
                     exp, gelu, getitem, kl_div, layer_norm, linear, log, matmul, mean, mse,
                     mul, no_grad, relu, reshape, sigmoid, softmax, sub, tanh, tensor, transpose, tsum)

__all__ = [
    "AdamState", "CheckpointError", "CheckpointVersionError", "DTYPE", "LayerNorm", "Linear",
    "Module", "Parameter", "ShapeError", "Tensor", "adam_step", "add", "clamp_min", "concat",
    "dropout", "exp", "gelu", "getitem", "grad_check", "init_weight", "kl_div", "layer_norm",
    "linear", "load_checkpoint", "log", "matmul", "mean", "mse", "mul", "no_grad", "relu", "reshape",
    "save_checkpoint", "sigmoid", "softmax", "sub", "tanh", "tensor", "transpose", "tsum",
]
