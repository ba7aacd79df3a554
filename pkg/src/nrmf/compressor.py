"""
Tucker-2 compression of conv layers.

A D x D conv with S inputs and T outputs becomes three convs:
1x1 (S -> R3, holds U3), D x D (R3 -> R4, holds the core, keeps stride and
padding) and 1x1 (R4 -> T, holds U4^T and the original bias).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from nrmf.engine.layers import Conv2d, Grads, Layer
from nrmf.engine.network import Network
from nrmf.errors import MissingRankError, RankError, ShapeError, UnknownLayerError
from nrmf.rank_selection import RankPair
from nrmf.tensor_core import Tucker2Factors, as_tensor4, tucker2_decompose, tucker2_reconstruct

logger = logging.getLogger(__name__)

SOURCE_FRESH = "fresh"
SOURCE_SWAP = "swap"
STAGES = ("first", "mid", "last")


class FactorizedConv(Layer):
    kind = "factorized"

    def __init__(self, name: str, first: Conv2d, mid: Conv2d, last: Conv2d, method: str = ""):
        super().__init__(name)
        s, r3 = first.kernel.shape[2:]
        if first.kernel.shape[:2] != (1, 1) or last.kernel.shape[:2] != (1, 1):
            raise ShapeError(f"{name}: outer stages must be 1x1 convs")
        if mid.kernel.shape[2] != r3 or last.kernel.shape[2] != mid.kernel.shape[3]:
            raise ShapeError(
                f"{name}: channel chain {first.kernel.shape} -> {mid.kernel.shape} -> {last.kernel.shape} does not compose"
            )
        self.first = first
        self.mid = mid
        self.last = last
        self.method = method

    def stages(self) -> list[tuple[str, Conv2d]]:
        return [("first", self.first), ("mid", self.mid), ("last", self.last)]

    @property
    def ranks(self) -> tuple[int, int]:
        return self.mid.kernel.shape[2], self.mid.kernel.shape[3]

    @property
    def dims(self) -> tuple[int, int, int]:
        """(D, S, T) of the dense layer this replaces."""
        return self.mid.kernel.shape[0], self.first.kernel.shape[2], self.last.kernel.shape[3]

    def provenance(self, stage: str) -> dict[str, Any]:
        r3, r4 = self.ranks
        return {"source_layer": self.name, "stage": stage, "ranks": [r3, r4], "method": self.method}

    def factors(self) -> Tucker2Factors:
        return Tucker2Factors(
            u3=self.first.kernel[0, 0],
            core=self.mid.kernel,
            u4=np.ascontiguousarray(self.last.kernel[0, 0].T),
        )

    def dense_kernel(self) -> np.ndarray:
        return tucker2_reconstruct(self.factors())

    def params(self) -> dict[str, np.ndarray]:
        return {
            f"{stage_name}.{key}": value
            for stage_name, stage in self.stages()
            for key, value in stage.params().items()
        }

    def set_param(self, key: str, value: np.ndarray) -> None:
        stage_name, _, param = key.partition(".")
        if stage_name not in STAGES:
            raise KeyError(f"{self.name} has no parameter {key!r}")
        getattr(self, stage_name).set_param(param, value)

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        for _, stage in self.stages():
            input_shape = stage.output_shape(input_shape)
        return input_shape

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        caches = []
        for _, stage in self.stages():
            x, cache = stage.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, dy: np.ndarray, cache: Any) -> tuple[np.ndarray, Grads]:
        grads: Grads = {}
        for (stage_name, stage), stage_cache in zip(reversed(self.stages()), reversed(cache)):
            dy, stage_grads = stage.backward(dy, stage_cache)
            for key, g in stage_grads.items():
                grads[f"{stage_name}.{key}"] = g
        return dy, grads


def _check_pair(s: int, t: int, r3: int, r4: int, name: str) -> None:
    if not 1 <= r3 <= s or not 1 <= r4 <= t:
        raise RankError(f"{name}: ranks ({r3}, {r4}) outside (1..{s}, 1..{t})")


def factorize_layer(conv: Conv2d | np.ndarray, ranks: RankPair | tuple[int, int], method: str = "") -> FactorizedConv:
    """Replace a dense conv (or bare kernel) by its rank-(r3, r4) truncated-HOSVD conv triple."""
    if not isinstance(conv, Conv2d):
        conv = Conv2d(ranks.layer if isinstance(ranks, RankPair) else "conv", as_tensor4(conv))
    r3, r4 = ranks.ranks if isinstance(ranks, RankPair) else ranks
    if isinstance(ranks, RankPair) and not method:
        method = ranks.method
    _, _, s, t = conv.kernel.shape
    _check_pair(s, t, r3, r4, conv.name)
    f = tucker2_decompose(conv.kernel, r3, r4)
    name = conv.name
    first = Conv2d(f"{name}.first", f.u3[None, None, :, :])
    mid = Conv2d(f"{name}.mid", f.core, stride=conv.stride, pad=conv.pad)
    last = Conv2d(f"{name}.last", f.u4.T[None, None, :, :], conv.bias)
    return FactorizedConv(name, first, mid, last, method=method)


def count_params(layer: FactorizedConv | Conv2d | tuple[int, ...], include_bias: bool = False) -> int:
    """
    Weight count of a conv layer.

    Dense: D^2 * S * T. Factorized: S*R3 + D^2*R3*R4 + R4*T. Tuples are read
    as (D, S, T) for a dense layer or (D, S, T, R3, R4) for a factorized one.
    Biases are added only with include_bias.
    """
    bias = 0
    if isinstance(layer, FactorizedConv):
        (d, s, t), (r3, r4) = layer.dims, layer.ranks
        if include_bias and layer.last.bias is not None:
            bias = t
        return s * r3 + d * d * r3 * r4 + r4 * t + bias
    if isinstance(layer, Conv2d):
        dh, dw, s, t = layer.kernel.shape
        if include_bias and layer.bias is not None:
            bias = t
        return dh * dw * s * t + bias
    dims = tuple(int(v) for v in layer)
    if len(dims) == 3:
        d, s, t = dims
        return d * d * s * t + (t if include_bias else 0)
    if len(dims) == 5:
        d, s, t, r3, r4 = dims
        return s * r3 + d * d * r3 * r4 + r4 * t + (t if include_bias else 0)
    raise ShapeError(f"expected (D, S, T) or (D, S, T, R3, R4), got {dims}")


def format_count(n: int) -> str:
    """589824 -> '589.82K', 2359296 -> '2.36M'."""
    if n >= 1_000_000:
        return f"{n / 1_000_000:.2f}M"
    if n >= 1_000:
        return f"{n / 1_000:.2f}K"
    return str(n)


def format_with_ratio(original: int, compressed: int) -> str:
    return f"{format_count(compressed)} (×{original / compressed:.2f})"


def _resize_axis(a: np.ndarray, axis: int, size: int) -> np.ndarray:
    """Truncate trailing entries or zero-pad along one axis."""
    current = a.shape[axis]
    if size == current:
        return a.copy()
    if size < current:
        index = [slice(None)] * a.ndim
        index[axis] = slice(0, size)
        return a[tuple(index)].copy()
    widths = [(0, 0)] * a.ndim
    widths[axis] = (0, size - current)
    return np.pad(a, widths)


def rank_swap(f: FactorizedConv, ranks: RankPair | tuple[int, int]) -> FactorizedConv:
    """
    Move a factorized conv to new ranks without re-decomposing.

    A growing rank zero-pads channels, a shrinking one drops the trailing
    channels. first: output channels follow r3. mid: input channels follow
    r3, output channels follow r4. last: input channels follow r4.
    """
    r3, r4 = ranks.ranks if isinstance(ranks, RankPair) else ranks
    _, s, t = f.dims
    _check_pair(s, t, r3, r4, f.name)
    first_bias = None if f.first.bias is None else _resize_axis(f.first.bias, 0, r3)
    mid_bias = None if f.mid.bias is None else _resize_axis(f.mid.bias, 0, r4)
    first = Conv2d(f.first.name, _resize_axis(f.first.kernel, 3, r3), first_bias)
    mid_kernel = _resize_axis(_resize_axis(f.mid.kernel, 2, r3), 3, r4)
    mid = Conv2d(f.mid.name, mid_kernel, mid_bias, stride=f.mid.stride, pad=f.mid.pad)
    last = Conv2d(f.last.name, _resize_axis(f.last.kernel, 2, r4), f.last.bias)
    return FactorizedConv(f.name, first, mid, last, method=f.method)


@dataclass(frozen=True)
class ReportRow:
    layer: str
    d: int
    s: int
    t: int
    r3: int
    r4: int
    original: int
    compressed: int

    @property
    def ratio(self) -> float:
        return self.original / self.compressed


@dataclass
class CompressionReport:
    rows: list[ReportRow] = field(default_factory=list)
    label: str = ""
    rank_method: str = ""
    init_method: str = ""
    network_params_before: int = 0
    network_params_after: int = 0
    accuracy_before: float | None = None
    accuracy_after: float | None = None

    @property
    def total_original(self) -> int:
        return sum(row.original for row in self.rows)

    @property
    def total_compressed(self) -> int:
        return sum(row.compressed for row in self.rows)

    @property
    def ratio(self) -> float:
        return self.total_original / self.total_compressed if self.total_compressed else 1.0


def _report_row(f: FactorizedConv) -> ReportRow:
    (d, s, t), (r3, r4) = f.dims, f.ranks
    return ReportRow(f.name, d, s, t, r3, r4, count_params((d, s, t)), count_params(f))


def compress_network(
    net: Network,
    rank_table: dict[str, RankPair | tuple[int, int]],
    source: str = SOURCE_FRESH,
    *,
    method: str = "",
    partial: bool = False,
) -> tuple[Network, CompressionReport]:
    """
    Return a compressed copy of net and its parameter report; net is untouched.

    source="fresh" decomposes every dense spatial conv at its tabled ranks.
    source="swap" moves every already-factorized layer to its tabled ranks.
    1x1 convs and linear layers are never touched; table entries naming them
    are logged and ignored. Without partial, every candidate layer needs a
    table entry. swap on a network without factorized layers is a RankError.
    """
    if source not in (SOURCE_FRESH, SOURCE_SWAP):
        raise ValueError(f"source must be {SOURCE_FRESH!r} or {SOURCE_SWAP!r}, got {source!r}")
    names = {layer.name for layer in net.layers}
    for name in rank_table:
        if name not in names:
            raise UnknownLayerError(f"rank table names unknown layer {name!r}")

    def is_candidate(layer) -> bool:
        if source == SOURCE_FRESH:
            return isinstance(layer, Conv2d) and layer.spatial
        return isinstance(layer, FactorizedConv)

    candidates = [layer.name for layer in net.layers if is_candidate(layer)]
    if source == SOURCE_SWAP and not candidates:
        raise RankError("rank swap needs a factorized network, found no factorized layer")
    for name in rank_table:
        if name not in candidates:
            logger.warning("%s: not a %s candidate, rank table entry ignored", name, source)

    out = net.copy()
    report = CompressionReport(network_params_before=net.param_count())
    for i, layer in enumerate(out.layers):
        if not is_candidate(layer):
            continue
        ranks = rank_table.get(layer.name)
        if ranks is None:
            if partial:
                continue
            raise MissingRankError(f"no ranks for layer {layer.name!r}")
        if source == SOURCE_FRESH:
            replaced = factorize_layer(layer, ranks, method)
        else:
            replaced = rank_swap(layer, ranks)
            if method:
                replaced.method = method
        out.layers[i] = replaced
        row = _report_row(replaced)
        report.rows.append(row)
        logger.info(
            "%s: (%d, %d) -> ranks (%d, %d), %s",
            row.layer, row.s, row.t, row.r3, row.r4, format_with_ratio(row.original, row.compressed),
        )
    out.bump()
    out.check_shapes()
    report.network_params_after = out.param_count()
    return out, report
