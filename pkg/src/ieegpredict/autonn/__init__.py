"""Minimal float64 tensor engine: the layers the multi-scale network needs."""

from .gradcheck import GradCheckReport, check_gradients, gradient_check, relative_error
from .layers import Conv2D, Dense, Flatten, MaxPool2D, Module, Parallel, ReLU, Sequential, Sigmoid
from .ops import (
    ShapeError,
    concat,
    conv2d,
    conv2d_backward,
    dense,
    dense_backward,
    flatten,
    maxpool2d,
    maxpool2d_argmax,
    maxpool2d_max,
    maxpool2d_backward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    split,
    weighted_bce,
    weighted_bce_with_logits,
)
from .optim import AdamState, NonFiniteGradientError, adam_step
