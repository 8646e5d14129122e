from . import functional
from .gradcheck import finite_diff_check
from .optim import Adam, adam_step
from .tensor import Tensor, as_tensor, backward, concat, get_dtype, no_grad, precision, set_default_dtype

__all__ = [
    "Adam",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "concat",
    "finite_diff_check",
    "functional",
    "get_dtype",
    "no_grad",
    "precision",
    "set_default_dtype",
]
