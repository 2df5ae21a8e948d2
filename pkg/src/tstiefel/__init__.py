"""Optimization over the third-order tensor Stiefel manifold under the t-product."""

from .tcore import (
    bcirc,
    dft,
    fnorm,
    fold,
    identity_tensor,
    idft,
    inner,
    off_part,
    skew_part,
    sym_part,
    t_inverse,
    t_product,
    t_transpose,
    trace,
    unfold,
)
from .tlinalg import (
    TPolar,
    TQr,
    TSvd,
    procrustes_max,
    spd_inv_sqrt,
    spd_sqrt,
    t_exp,
    t_polar,
    t_qr,
    t_svd,
    t_sylvester_spectral,
    t_sylvester_vec,
)
from .manifold import TensorStiefel, manifold_dim
from .solver import RunRecord, SolverConfig, solve
from .problems import alternating_solve, fd_gradient_oracle, make_instance

__version__ = "0.1.0"

__all__ = [
    "bcirc", "dft", "fnorm", "fold", "identity_tensor", "idft", "inner",
    "off_part", "skew_part", "sym_part", "t_inverse", "t_product",
    "t_transpose", "trace", "unfold",
    "TPolar", "TQr", "TSvd", "procrustes_max", "spd_inv_sqrt", "spd_sqrt",
    "t_exp", "t_polar", "t_qr", "t_svd", "t_sylvester_spectral",
    "t_sylvester_vec",
    "TensorStiefel", "manifold_dim",
    "RunRecord", "SolverConfig", "solve",
    "alternating_solve", "fd_gradient_oracle", "make_instance",
]
