"""Minimal reverse-mode training engine for small NHWC convolutional networks."""

from nrmf.engine.layers import Conv2d, Flatten, Layer, Linear, MaxPool2, ReLU, conv2d_forward
from nrmf.engine.network import ForwardCache, Network, backward, forward
from nrmf.engine.training import TrainConfig, evaluate, fit, sgd_step

__all__ = [
    "Conv2d",
    "Flatten",
    "ForwardCache",
    "Layer",
    "Linear",
    "MaxPool2",
    "Network",
    "ReLU",
    "TrainConfig",
    "backward",
    "conv2d_forward",
    "evaluate",
    "fit",
    "forward",
    "sgd_step",
]
