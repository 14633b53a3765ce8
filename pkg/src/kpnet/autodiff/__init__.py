from . import functional
from .functional import BatchNormState
from .optim import l2_penalty, sgd_step, zero_grad
from .tensor import Parameter, Tensor, as_tensor, backward, grad_enabled, no_grad

__all__ = [
    "BatchNormState",
    "Parameter",
    "Tensor",
    "as_tensor",
    "backward",
    "functional",
    "grad_enabled",
    "l2_penalty",
    "no_grad",
    "sgd_step",
    "zero_grad",
]
