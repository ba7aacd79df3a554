"""
Layers with explicit forward/backward passes.

Feature maps are NHWC float64 arrays. Every layer is stateless during a pass:
forward returns (output, cache) and backward consumes that cache, so two
passes over the same weights never interfere.
"""

from typing import Any

import numpy as np

from nrmf.errors import ShapeError
from nrmf.tensor_core import as_tensor4

Grads = dict[str, np.ndarray]


class Layer:
    """Base class. Parameterless layers only override forward/backward."""

    kind = "layer"

    def __init__(self, name: str):
        self.name = name

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def set_param(self, key: str, value: np.ndarray) -> None:
        raise KeyError(f"{self.name} has no parameter {key!r}")

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache: Any) -> tuple[np.ndarray, Grads]:
        raise NotImplementedError

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params().values())

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward(
    kernel: np.ndarray,
    x: np.ndarray,
    stride: int = 1,
    pad: int = 0,
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """
    Cross-correlation of an NHWC batch with a (D_h, D_w, S, T) kernel.

    out[n, i, j, t] = bias[t] + sum_{h, w, s} xpad[n, i*stride + h, j*stride + w, s] * K[h, w, s, t]
    """
    kernel = as_tensor4(kernel)
    x = np.asarray(x, dtype=np.float64)
    dh, dw, s, t = kernel.shape
    if x.ndim != 4 or x.shape[3] != s:
        raise ShapeError(f"conv expects NHWC input with {s} channels, got shape {x.shape}")
    n, h, w, _ = x.shape
    oh, ow = _conv_out(h, dh, stride, pad), _conv_out(w, dw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"kernel {dh}x{dw} does not fit a {h}x{w} map with pad {pad}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    out = np.zeros((n, oh, ow, t))
    for i in range(dh):
        for j in range(dw):
            window = xp[:, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride, :]
            out += window @ kernel[i, j]
    if bias is not None:
        out += bias
    return out


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(
        self,
        name: str,
        kernel: np.ndarray,
        bias: np.ndarray | None = None,
        stride: int = 1,
        pad: int = 0,
    ):
        super().__init__(name)
        self.kernel = as_tensor4(kernel).copy()
        t = self.kernel.shape[3]
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float64).reshape(t).copy()
        self.stride = int(stride)
        self.pad = int(pad)

    @property
    def spatial(self) -> bool:
        """True when the kernel is larger than 1x1 (the regularized, compressible set)."""
        return self.kernel.shape[0] * self.kernel.shape[1] > 1

    def params(self) -> dict[str, np.ndarray]:
        out = {"kernel": self.kernel}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def set_param(self, key: str, value: np.ndarray) -> None:
        current = self.params().get(key)
        if current is None:
            super().set_param(key, value)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != current.shape:
            raise ShapeError(f"{self.name}.{key}: expected {current.shape}, got {value.shape}")
        setattr(self, key, value.copy())

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        h, w, c = input_shape
        dh, dw, s, t = self.kernel.shape
        if c != s:
            raise ShapeError(f"{self.name} expects {s} input channels, got {c}")
        return _conv_out(h, dh, self.stride, self.pad), _conv_out(w, dw, self.stride, self.pad), t

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        return conv2d_forward(self.kernel, x, self.stride, self.pad, self.bias), x

    def backward(self, dy: np.ndarray, cache: Any) -> tuple[np.ndarray, Grads]:
        x = cache
        dh, dw, _, _ = self.kernel.shape
        st, pad = self.stride, self.pad
        _, oh, ow, _ = dy.shape
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
        dxp = np.zeros_like(xp)
        dkernel = np.zeros_like(self.kernel)
        for i in range(dh):
            for j in range(dw):
                rows = slice(i, i + st * (oh - 1) + 1, st)
                cols = slice(j, j + st * (ow - 1) + 1, st)
                dkernel[i, j] = np.tensordot(xp[:, rows, cols, :], dy, axes=([0, 1, 2], [0, 1, 2]))
                dxp[:, rows, cols, :] += dy @ self.kernel[i, j].T
        dx = dxp[:, pad : pad + x.shape[1], pad : pad + x.shape[2], :] if pad else dxp
        grads = {"kernel": dkernel}
        if self.bias is not None:
            grads["bias"] = dy.sum(axis=(0, 1, 2))
        return dx, grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, dy: np.ndarray, cache: Any) -> tuple[np.ndarray, Grads]:
        return np.where(cache, dy, 0.0), {}


class MaxPool2(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/cols are dropped. Ties go to the first element in scan order."""

    kind = "maxpool2"

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        h, w, c = input_shape
        if h < 2 or w < 2:
            raise ShapeError(f"{self.name} needs at least a 2x2 map, got {h}x{w}")
        return h // 2, w // 2, c

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        n, h, w, c = x.shape
        oh, ow = h // 2, w // 2
        windows = (
            x[:, : 2 * oh, : 2 * ow, :]
            .reshape(n, oh, 2, ow, 2, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, oh, ow, c, 4)
        )
        idx = np.argmax(windows, axis=-1)
        y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, dy: np.ndarray, cache: Any) -> tuple[np.ndarray, Grads]:
        shape, idx = cache
        n, h, w, c = shape
        oh, ow = h // 2, w // 2
        dwin = np.zeros((n, oh, ow, c, 4))
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros(shape)
        dx[:, : 2 * oh, : 2 * ow, :] = (
            dwin.reshape(n, oh, ow, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * oh, 2 * ow, c)
        )
        return dx, {}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return (int(np.prod(input_shape)),)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy: np.ndarray, cache: Any) -> tuple[np.ndarray, Grads]:
        return dy.reshape(cache), {}


class Linear(Layer):
    """y = x W + b with W of shape (in, out)."""

    kind = "linear"

    def __init__(self, name: str, weight: np.ndarray, bias: np.ndarray | None = None):
        super().__init__(name)
        self.weight = np.asarray(weight, dtype=np.float64).copy()
        if self.weight.ndim != 2:
            raise ShapeError(f"{name}: weight must be 2-D, got shape {self.weight.shape}")
        out = self.weight.shape[1]
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float64).reshape(out).copy()

    def params(self) -> dict[str, np.ndarray]:
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def set_param(self, key: str, value: np.ndarray) -> None:
        current = self.params().get(key)
        if current is None:
            super().set_param(key, value)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != current.shape:
            raise ShapeError(f"{self.name}.{key}: expected {current.shape}, got {value.shape}")
        setattr(self, key, value.copy())

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        if input_shape != (self.weight.shape[0],):
            raise ShapeError(f"{self.name} expects input ({self.weight.shape[0]},), got {input_shape}")
        return (self.weight.shape[1],)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y, x

    def backward(self, dy: np.ndarray, cache: Any) -> tuple[np.ndarray, Grads]:
        x = cache
        grads = {"weight": x.T @ dy}
        if self.bias is not None:
            grads["bias"] = dy.sum(axis=0)
        return dy @ self.weight.T, grads


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_conv(rng: np.random.Generator, name: str, d: int, s: int, t: int, pad: int = 0, stride: int = 1) -> Conv2d:
    kernel = kaiming_uniform(rng, (d, d, s, t), fan_in=d * d * s)
    return Conv2d(name, kernel, np.zeros(t), stride=stride, pad=pad)


def init_linear(rng: np.random.Generator, name: str, n_in: int, n_out: int) -> Linear:
    return Linear(name, kaiming_uniform(rng, (n_in, n_out), fan_in=n_in), np.zeros(n_out))
