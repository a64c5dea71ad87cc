"""Numerical kernels: convolution, pooling, softmax, dropout, gradient checks."""
from .gradcheck import GradCheckReport, grad_check
from .kernels import BACKEND
from .ops import (
    PROB_FLOOR,
    ConvFilter,
    affine,
    affine_backward,
    conv_valid,
    cross_entropy,
    cross_entropy_backward,
    dropout,
    pooled_length,
    relu_maxpool,
    softmax,
    softmax_backward,
    softmax_xent_batch,
    tanh_backward,
)

__all__ = [
    "BACKEND", "PROB_FLOOR", "ConvFilter", "GradCheckReport", "affine", "affine_backward",
    "conv_valid", "cross_entropy", "cross_entropy_backward", "dropout", "grad_check",
    "pooled_length", "relu_maxpool", "softmax", "softmax_backward", "softmax_xent_batch",
    "tanh_backward",
]
