from . import autodiff as ops
from .autodiff import Tensor, UnsupportedOperation, conv2d, make_op
from .gradcheck import (
    GradCheckReport,
    brute_force_logdet,
    check_gradients,
    grad,
    numeric_jacobian,
    relative_error,
    value_and_grad,
)
from .optim import HALVING_FRACTIONS, OptimizerConfig, ParamStore, adam_step, lr_schedule

__all__ = [
    "ops",
    "Tensor",
    "UnsupportedOperation",
    "conv2d",
    "make_op",
    "GradCheckReport",
    "brute_force_logdet",
    "check_gradients",
    "grad",
    "numeric_jacobian",
    "relative_error",
    "value_and_grad",
    "HALVING_FRACTIONS",
    "OptimizerConfig",
    "ParamStore",
    "adam_step",
    "lr_schedule",
]
