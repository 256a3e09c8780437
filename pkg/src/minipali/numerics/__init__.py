"""Dense tensor math with reverse-mode gradients."""

from . import ops
from .gradcheck import NondeterministicFunctionError, finite_difference_grad, relative_error
from .resize import bilinear_resize_grid
from .tensor import (
    DEFAULT_DTYPE,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    as_tensor,
    backward,
)

__all__ = [
    "DEFAULT_DTYPE",
    "NonFiniteError",
    "NondeterministicFunctionError",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "as_tensor",
    "backward",
    "bilinear_resize_grid",
    "finite_difference_grad",
    "ops",
    "relative_error",
]
