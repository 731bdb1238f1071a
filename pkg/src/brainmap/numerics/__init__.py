"""Dense kernels, SVD, random streams and reverse-mode differentiation."""

from .linalg import SvdConfig, matmul, row_softmax, thin_svd
from .optim import Adam
from .rng import RngStream, stream
from .tensor import Tensor, backward, no_grad, parameter, stable_sigmoid

__all__ = [
    "Adam",
    "RngStream",
    "SvdConfig",
    "Tensor",
    "backward",
    "matmul",
    "no_grad",
    "parameter",
    "row_softmax",
    "stable_sigmoid",
    "stream",
    "thin_svd",
]
