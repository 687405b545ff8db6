"""Dense/sparse float64 kernels with reverse-mode differentiation over a
fixed op set, plus Adam and a small checkpoint format."""

from .tensor import (
    Tensor,
    add,
    add_bias,
    backward,
    concat,
    constant,
    cosine,
    cosine_matrix,
    div_safe_cols,
    dropout,
    elu,
    exp,
    frobenius_sq,
    gather_rows,
    layer_norm,
    log,
    matmul,
    mean_all,
    mean_rows,
    mul,
    mul_cols,
    neg,
    op_set,
    row_normalize,
    scale,
    scale_by,
    slice_cols,
    softmax_rows,
    spmm,
    take_pairs,
    tanh,
    transpose,
)
from .optim import Adam, init_params
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [name for name in dir() if not name.startswith("_")]
