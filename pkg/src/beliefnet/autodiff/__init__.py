from .tensor import (
    BackwardError,
    ShapeError,
    Tensor,
    UnknownOpError,
    apply_op,
    backward,
    no_grad,
)
from .nn import (
    SIGMA_FLOOR,
    ConvParams,
    GaussianStats,
    GRUParams,
    Subnet,
    conv_encoder,
    gaussian_head,
    gaussian_kl,
    gru_cell,
    reparameterize,
)

__all__ = [
    "BackwardError", "ShapeError", "Tensor", "UnknownOpError", "apply_op", "backward", "no_grad",
    "SIGMA_FLOOR", "ConvParams", "GaussianStats", "GRUParams", "Subnet", "conv_encoder",
    "gaussian_head", "gaussian_kl", "gru_cell", "reparameterize",
]
