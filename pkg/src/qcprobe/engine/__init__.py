"""Deterministic float64 reverse-mode engine for 1D conv autoencoders."""

from . import kernels
from .gradcheck import GradCheckReport, grad_check
from .layers import BatchNorm, Conv1d, Dense, Layer, MaxPool2, ReLU, Unflatten, Upsample2, run_layers
from .optim import NonFiniteGradientError, ParamStore, adam_step
from .tensor import (
    BatchNormState,
    ShapeError,
    Tensor,
    batchnorm_channels,
    conv1d_same,
    dense,
    masked_mse,
    maxpool2,
    relu,
    reshape,
    upsample2,
)

__all__ = [
    "BatchNorm", "BatchNormState", "Conv1d", "Dense", "GradCheckReport", "Layer", "MaxPool2",
    "NonFiniteGradientError", "ParamStore", "ReLU", "ShapeError", "Tensor", "Unflatten",
    "Upsample2", "adam_step", "batchnorm_channels", "conv1d_same", "dense", "grad_check",
    "kernels", "masked_mse", "maxpool2", "relu", "reshape", "run_layers", "upsample2",
]
