"""Sequential network with a softmax cross-entropy head."""

import copy
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from nrmf.engine.layers import Conv2d, Layer
from nrmf.errors import LabelError, ShapeError, StaleCacheError, UnknownLayerError

Gradients = dict[str, dict[str, np.ndarray]]


@dataclass
class ForwardCache:
    """Everything backward needs from one forward pass."""

    version: int
    caches: list[Any]
    probs: np.ndarray
    labels: np.ndarray
    net_id: int = field(default=0)


class Network:
    """Ordered layers, an NHWC input shape and a class count."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int], num_classes: int):
        names = [layer.name for layer in layers]
        if len(set(names)) != len(names):
            raise ShapeError(f"layer names must be unique, got {names}")
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.num_classes = int(num_classes)
        self.version = 0
        self.check_shapes()

    def check_shapes(self) -> tuple[int, ...]:
        """Walk the layer list and confirm adjacent shapes compose."""
        shape: tuple[int, ...] = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if shape != (self.num_classes,):
            raise ShapeError(f"network ends in shape {shape}, expected ({self.num_classes},)")
        return shape

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise UnknownLayerError(f"no layer named {name!r}")

    def index_of(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise UnknownLayerError(f"no layer named {name!r}")

    def regularized_convs(self) -> list[Conv2d]:
        """Dense conv layers with kernels larger than 1x1."""
        return [layer for layer in self.layers if isinstance(layer, Conv2d) and layer.spatial]

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def bump(self) -> None:
        """Mark parameters as changed; outstanding forward caches become stale."""
        self.version += 1

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def logits(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out, _ = layer.forward(out)
        return out

    def __repr__(self) -> str:
        return f"Network({[layer.name for layer in self.layers]})"


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and softmax probabilities."""
    logp = _log_softmax(logits)
    loss = -float(np.mean(logp[np.arange(len(labels)), labels]))
    return loss, np.exp(logp)


def forward(net: Network, batch: np.ndarray, labels: np.ndarray) -> tuple[float, ForwardCache]:
    """Mean cross-entropy of a batch plus the cache backward needs."""
    x = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 4 or x.shape[1:] != net.input_shape:
        raise ShapeError(f"batch must be (N, {', '.join(map(str, net.input_shape))}), got {x.shape}")
    if labels.shape != (x.shape[0],):
        raise ShapeError(f"expected {x.shape[0]} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= net.num_classes):
        raise LabelError(f"labels must lie in 0..{net.num_classes - 1}")
    caches = []
    out = x
    for layer in net.layers:
        out, cache = layer.forward(out)
        caches.append(cache)
    loss, probs = cross_entropy(out, labels)
    return loss, ForwardCache(version=net.version, caches=caches, probs=probs, labels=labels, net_id=id(net))


def backward(net: Network, cache: ForwardCache | None) -> Gradients:
    """Gradient of the mean cross-entropy with respect to every parameter."""
    if cache is None:
        raise StaleCacheError("backward called without a forward cache")
    if cache.net_id != id(net) or cache.version != net.version or len(cache.caches) != len(net.layers):
        raise StaleCacheError("forward cache does not belong to the current network weights")
    n = cache.labels.shape[0]
    dy = cache.probs.copy()
    dy[np.arange(n), cache.labels] -= 1.0
    dy /= n
    grads: Gradients = {}
    for layer, layer_cache in zip(reversed(net.layers), reversed(cache.caches)):
        dy, layer_grads = layer.backward(dy, layer_cache)
        if layer_grads:
            grads[layer.name] = layer_grads
    return grads
