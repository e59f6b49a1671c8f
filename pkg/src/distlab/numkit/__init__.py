from .mlp import MlpParams, ShapeError, init_mlp, mlp_backward, mlp_forward
from .ops import (assign_flat, clip_global_norm, finite_diff_check, flatten, global_norm,
                  log_softmax, softmax)
from .rng import Rng, splitmix64

__all__ = [
    "MlpParams", "ShapeError", "init_mlp", "mlp_backward", "mlp_forward",
    "assign_flat", "clip_global_norm", "finite_diff_check", "flatten", "global_norm",
    "log_softmax", "softmax", "Rng", "splitmix64",
]
