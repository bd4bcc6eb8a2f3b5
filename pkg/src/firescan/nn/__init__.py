"""Minimal deterministic network kernels: layers, weighted BCE, Adam."""

from . import functional
from .functional import sigmoid, weighted_bce_backward, weighted_bce_forward
from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2,
    Dense,
    GlobalMaxPool,
    Layer,
    MaxPool2,
    ReLU,
    Sequential,
    Sigmoid,
    Tensor,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "BatchNorm2d",
    "Conv2d",
    "ConvTranspose2",
    "Dense",
    "GlobalMaxPool",
    "Layer",
    "MaxPool2",
    "ReLU",
    "Sequential",
    "Sigmoid",
    "Tensor",
    "adam_step",
    "functional",
    "sigmoid",
    "weighted_bce_backward",
    "weighted_bce_forward",
]
