"""Minimal dense float64 tensor engine with taped reverse-mode gradients.

Everything the recurrent scoring model needs and nothing more: a handful of
matrix/elementwise operations that record backward closures, GRU cells and a
bidirectional GRU scan, SGD with momentum and weight decay, a binary
checkpoint format, and a finite-difference gradient checker.
"""

from .tensor import (
    Parameter,
    Tensor,
    add,
    add_scalar,
    affine,
    backward,
    clip,
    concat_cols,
    concat_rows,
    constant,
    linear,
    log,
    matmul,
    mean_all,
    mul,
    neg,
    no_grad,
    relu,
    repeat_rows,
    reshape,
    scale,
    sigmoid,
    slice_cols,
    slice_rows,
    softmax_rows,
    sub,
    sum_all,
    tanh,
    tile_vertical,
)
from .gru import BiGRUParams, GRUCellParams, bigru, gru_cell, init_bigru, init_gru_cell
from .optim import OptState, sgd_step
from .checkpoint import CKPT_MAGIC, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .init import uniform_init

__all__ = [
    "Tensor",
    "Parameter",
    "constant",
    "no_grad",
    "backward",
    "affine",
    "linear",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "add_scalar",
    "relu",
    "tanh",
    "sigmoid",
    "softmax_rows",
    "log",
    "clip",
    "concat_cols",
    "concat_rows",
    "slice_cols",
    "slice_rows",
    "reshape",
    "tile_vertical",
    "repeat_rows",
    "sum_all",
    "mean_all",
    "GRUCellParams",
    "BiGRUParams",
    "gru_cell",
    "bigru",
    "init_gru_cell",
    "init_bigru",
    "OptState",
    "sgd_step",
    "CKPT_MAGIC",
    "save_checkpoint",
    "load_checkpoint",
    "GradCheckReport",
    "grad_check",
    "uniform_init",
]
