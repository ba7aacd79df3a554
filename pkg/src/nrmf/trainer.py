"""Regularized training with per-epoch singular-value logging and final rank selection."""

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from nrmf.engine.layers import Conv2d
from nrmf.engine.network import Network
from nrmf.engine.training import EpochStats, TrainConfig, fit
from nrmf.errors import EmptyLayerSetError, UnknownLayerError
from nrmf.rank_selection import RankPair, select_ranks, spectra
from nrmf.regularizer import make_regularizer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SvRecord:
    epoch: int
    lambdas: np.ndarray
    xis: np.ndarray


@dataclass
class SvTrajectory:
    """Per-epoch Gram spectra (mode 3: lambdas, mode 4: xis) of one monitored layer."""

    layer: str
    records: list[SvRecord] = field(default_factory=list)

    def energies(self) -> list[tuple[int, float, float]]:
        """(epoch, sum of lambdas, sum of xis) per record."""
        return [(r.epoch, float(r.lambdas.sum()), float(r.xis.sum())) for r in self.records]


@dataclass
class TrainResult:
    net: Network
    trajectories: dict[str, SvTrajectory]
    ranks: dict[str, RankPair]
    history: list[EpochStats]


def layer_kernel(net: Network, name: str) -> np.ndarray:
    """Dense kernel of a conv layer; factorized layers are reconstructed."""
    layer = net.layer(name)
    if isinstance(layer, Conv2d):
        return layer.kernel
    dense = getattr(layer, "dense_kernel", None)
    if dense is None:
        raise UnknownLayerError(f"layer {name!r} has no convolution kernel")
    return dense()


def log_epoch_svs(
    net: Network,
    monitored: Iterable[str],
    epoch: int,
    trajectories: dict[str, SvTrajectory] | None = None,
) -> dict[str, SvTrajectory]:
    """Append the current Gram spectra of each monitored layer. Reads weights only."""
    trajectories = {} if trajectories is None else trajectories
    for name in monitored:
        lam, xi = spectra(layer_kernel(net, name))
        trajectories.setdefault(name, SvTrajectory(name)).records.append(SvRecord(epoch, lam, xi))
    return trajectories


def default_monitored(net: Network) -> list[str]:
    return [conv.name for conv in net.regularized_convs()]


def train_nrmf(
    net: Network,
    cfg: TrainConfig,
    x: np.ndarray,
    y: np.ndarray,
    monitored: list[str] | None = None,
) -> TrainResult:
    """
    Minimize mean cross-entropy + alpha * L_n for cfg.epochs epochs, then pick
    ranks with threshold cfg.p for every spatial conv layer.

    The network is updated in place. Spectra are logged before training
    (epoch 0) and after every epoch.
    """
    regularized = default_monitored(net)
    if cfg.alpha > 0 and not regularized:
        raise EmptyLayerSetError("network has no conv layer with a kernel larger than 1x1")
    monitored = regularized if monitored is None else list(monitored)
    for name in monitored:
        net.layer(name)

    trajectories = log_epoch_svs(net, monitored, 0)

    def on_epoch_end(current: Network, stats: EpochStats) -> None:
        log_epoch_svs(current, monitored, stats.epoch, trajectories)

    history = fit(
        net,
        cfg,
        x,
        y,
        regularizer=make_regularizer(cfg.penalty),
        on_epoch_end=on_epoch_end,
    )
    ranks = {name: select_ranks(layer_kernel(net, name), cfg.p, layer=name) for name in regularized}
    return TrainResult(net=net, trajectories=trajectories, ranks=ranks, history=history)
