from . import functional
from .gradcheck import GradCheckReport, grad_check, relative_error
from .module import Linear, Module, parameter, trunc_normal, xavier_uniform
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    default_dtype,
    finite_checks,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "functional", "GradCheckReport", "grad_check", "relative_error",
    "Linear", "Module", "parameter", "trunc_normal", "xavier_uniform",
    "NonFiniteError", "ShapeError", "Tensor", "as_tensor", "default_dtype", "finite_checks",
    "get_default_dtype", "is_grad_enabled", "no_grad", "set_default_dtype",
]
