"""Model recipes: LeNet-5 variants with an inserted, monitored 3x3 conv."""

from typing import Callable

import numpy as np

from nrmf.engine.layers import Flatten, MaxPool2, ReLU, init_conv, init_linear
from nrmf.engine.network import Network
from nrmf.errors import ConfigError

MNIST_SHAPE = (28, 28, 1)


def lenet5(seed: int, width: int = 16, inserted: int = 32) -> Network:
    """
    conv1 5x5 1->6 (pad 2), pool, conv2 5x5 6->width, conv3 3x3 width->inserted
    (pad 1, the inserted layer), pool, then 120-84-10 fully connected.
    """
    rng = np.random.default_rng(seed)
    layers = [
        init_conv(rng, "conv1", 5, 1, 6, pad=2),
        ReLU("relu1"),
        MaxPool2("pool1"),
        init_conv(rng, "conv2", 5, 6, width),
        ReLU("relu2"),
        init_conv(rng, "conv3", 3, width, inserted, pad=1),
        ReLU("relu3"),
        MaxPool2("pool2"),
        Flatten("flatten"),
        init_linear(rng, "fc1", 5 * 5 * inserted, 120),
        ReLU("relu4"),
        init_linear(rng, "fc2", 120, 84),
        ReLU("relu5"),
        init_linear(rng, "fc3", 84, 10),
    ]
    return Network(layers, MNIST_SHAPE, 10)


def lenet5_desk(seed: int) -> Network:
    return lenet5(seed, width=16, inserted=32)


def lenet5_full(seed: int) -> Network:
    """Full-size inserted layer (3x3x128x256); long runs only."""
    return lenet5(seed, width=128, inserted=256)


MODELS: dict[str, Callable[[int], Network]] = {
    "lenet5-desk": lenet5_desk,
    "lenet5-full": lenet5_full,
}

# Layer whose spectra the singular-value experiment reports.
MONITORED_LAYER = "conv3"


def build_model(name: str, seed: int) -> Network:
    try:
        recipe = MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return recipe(seed)
