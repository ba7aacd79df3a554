"""Training configuration, plain SGD with step-decay learning rate, and the epoch loop."""

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Iterator

import numpy as np

from nrmf.engine.network import Gradients, Network, backward, cross_entropy, forward
from nrmf.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

PENALTIES = ("trace", "nuclear")

# (loss, gradients) of an extra term added to the data loss.
Regularizer = Callable[[Network], tuple[float, Gradients]]


@dataclass(frozen=True)
class TrainConfig:
    """Defaults follow the LeNet-5 singular-value experiment: batch 64, lr 1e-4 decaying x0.1 every 5 epochs."""

    batch_size: int = 64
    lr: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 5
    epochs: int = 50
    alpha: float = 1e-2
    seed: int = 0
    p: float = 0.95
    penalty: str = "trace"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError(f"lr_decay_factor must lie in (0, 1], got {self.lr_decay_factor}")
        if self.lr_decay_every < 1:
            raise ConfigError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        # alpha = 0 switches the regularizer off (the unregularized arm).
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 < self.p <= 1:
            raise ConfigError(f"p must lie in (0, 1], got {self.p}")
        if self.penalty not in PENALTIES:
            raise ConfigError(f"penalty must be one of {PENALTIES}, got {self.penalty!r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    loss: float
    regularizer: float
    accuracy: float


def sgd_step(net: Network, grads: Gradients, cfg: TrainConfig, epoch: int) -> Network:
    """Descent step w <- w - lr(epoch) * g, in place. Returns net for chaining."""
    lr = cfg.lr_at(epoch)
    for name, layer_grads in grads.items():
        params = net.layer(name).params()
        for key, g in layer_grads.items():
            if key not in params:
                raise ShapeError(f"gradient for unknown parameter {name}.{key}")
            if params[key].shape != g.shape:
                raise ShapeError(f"{name}.{key}: gradient {g.shape} vs parameter {params[key].shape}")
            params[key] -= lr * g
    net.bump()
    return net


def add_gradients(base: Gradients, extra: Gradients, scale: float = 1.0) -> Gradients:
    out = {name: dict(layer) for name, layer in base.items()}
    for name, layer in extra.items():
        target = out.setdefault(name, {})
        for key, g in layer.items():
            target[key] = target[key] + scale * g if key in target else scale * g
    return out


def minibatches(n: int, batch_size: int, rng: np.random.Generator | None) -> Iterator[np.ndarray]:
    """Index batches over n samples; shuffled when rng is given. The last batch may be short."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def shuffle_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(seed + 1 + epoch)


def evaluate(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> tuple[float, float]:
    """Top-1 accuracy and mean cross-entropy over a dataset, in fixed batch order."""
    if len(y) == 0:
        return 0.0, 0.0
    correct = 0
    total_loss = 0.0
    for idx in minibatches(len(y), batch_size, None):
        logits = net.logits(x[idx])
        loss, _ = cross_entropy(logits, y[idx])
        total_loss += loss * len(idx)
        correct += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
    return correct / len(y), total_loss / len(y)


def fit(
    net: Network,
    cfg: TrainConfig,
    x: np.ndarray,
    y: np.ndarray,
    *,
    regularizer: Regularizer | None = None,
    on_epoch_end: Callable[[Network, EpochStats], None] | None = None,
) -> list[EpochStats]:
    """
    Run cfg.epochs epochs of mini-batch SGD on (x, y).

    When regularizer is given, its gradient is scaled by cfg.alpha and added
    to the data gradient at every step. Batch order depends only on
    (cfg.seed, epoch), so runs are reproducible.
    """
    if len(y) == 0:
        raise ShapeError("training set is empty")
    history = []
    for epoch in range(cfg.epochs):
        rng = shuffle_rng(cfg.seed, epoch)
        total_loss = 0.0
        total_reg = 0.0
        correct = 0
        for idx in minibatches(len(y), cfg.batch_size, rng):
            loss, cache = forward(net, x[idx], y[idx])
            grads = backward(net, cache)
            reg_value = 0.0
            if regularizer is not None and cfg.alpha > 0:
                reg_value, reg_grads = regularizer(net)
                grads = add_gradients(grads, reg_grads, cfg.alpha)
            total_loss += loss * len(idx)
            total_reg += reg_value * len(idx)
            correct += int(np.sum(np.argmax(cache.probs, axis=1) == y[idx]))
            sgd_step(net, grads, cfg, epoch)
        stats = EpochStats(
            epoch=epoch + 1,
            lr=cfg.lr_at(epoch),
            loss=total_loss / len(y),
            regularizer=total_reg / len(y),
            accuracy=correct / len(y),
        )
        logger.info(
            "epoch %d/%d lr=%.3g loss=%.4f reg=%.4g acc=%.4f",
            stats.epoch, cfg.epochs, stats.lr, stats.loss, stats.regularizer, stats.accuracy,
        )
        history.append(stats)
        if on_epoch_end is not None:
            on_epoch_end(net, stats)
    return history
