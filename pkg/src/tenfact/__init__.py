"""tenfact: matrix-multiplication algorithm discovery by exact integer tensor
decomposition, guided by a supervised policy/value network and MCTS."""

from .kernels import BACKEND as KERNEL_BACKEND
from .tensors import (ENTRY_CAP, BasisTransform, Decomposition, Factor,
                      apply_factor, build_matmul_tensor, canonicalize,
                      change_of_basis, is_zero, outer3, rank_upper_bound,
                      render_algorithm, transform_factors,
                      verify_decomposition, verify_matmul_algorithm)

__all__ = [
    "KERNEL_BACKEND", "ENTRY_CAP", "BasisTransform", "Decomposition", "Factor",
    "apply_factor", "build_matmul_tensor", "canonicalize", "change_of_basis",
    "is_zero", "outer3", "rank_upper_bound", "render_algorithm",
    "transform_factors", "verify_decomposition", "verify_matmul_algorithm",
]

__version__ = "0.1.0"
