"""
Trace penalty on the channel unfoldings of the spatial conv kernels.

    L_n = 1/(2M) * sum_m [ tr(W1_m W1_m^T) + tr(W2_m W2_m^T) ]

Both traces equal the sum of squared kernel entries, so L_n is the mean
squared Frobenius norm of the M kernels and its gradient is (2/M) W_m. No
Gram matrix or eigensolver is needed during training.

The optional "nuclear" penalty replaces each trace by the nuclear norm of
the unfolding itself (sum of singular values rather than their squares).
"""

from typing import Sequence

import numpy as np

from nrmf.eig import gram_eig
from nrmf.engine.network import Gradients, Network
from nrmf.errors import ConfigError, EmptyLayerSetError
from nrmf.tensor_core import (
    as_tensor4,
    dematricize_mode3,
    dematricize_mode4,
    matricize_mode3,
    matricize_mode4,
)

# Singular values at or below this fraction of the largest carry no subgradient.
NUCLEAR_CUTOFF = 1e-12


def _kernels(layers: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(layers) == 0:
        raise EmptyLayerSetError("the regularized layer set is empty")
    return [as_tensor4(k) for k in layers]


def nuclear_loss(layers: Sequence[np.ndarray]) -> float:
    kernels = _kernels(layers)
    return sum(float(np.sum(k * k)) for k in kernels) / len(kernels)


def nuclear_loss_grad(layers: Sequence[np.ndarray]) -> list[np.ndarray]:
    kernels = _kernels(layers)
    scale = 2.0 / len(kernels)
    return [scale * k for k in kernels]


def _unfolding_nuclear(m: np.ndarray) -> tuple[float, np.ndarray]:
    """||M||_* and its subgradient U V^T, computed from the eigenpairs of M M^T."""
    eig = gram_eig(m)
    sigma = np.sqrt(eig.eigenvalues)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0.0, np.zeros_like(m)
    keep = sigma > NUCLEAR_CUTOFF * sigma[0]
    u = eig.eigenvectors[:, keep]
    # U V^T = U diag(1/sigma) U^T M
    grad = (u / sigma[keep]) @ (u.T @ m)
    return float(sigma.sum()), grad


def unfolding_nuclear_loss(layers: Sequence[np.ndarray]) -> tuple[float, list[np.ndarray]]:
    """1/(2M) * sum_m (||W1_m||_* + ||W2_m||_*) and its per-kernel gradient."""
    kernels = _kernels(layers)
    scale = 1.0 / (2 * len(kernels))
    total = 0.0
    grads = []
    for k in kernels:
        n3, g3 = _unfolding_nuclear(matricize_mode3(k))
        n4, g4 = _unfolding_nuclear(matricize_mode4(k))
        total += n3 + n4
        grads.append(scale * (dematricize_mode3(g3, k.shape) + dematricize_mode4(g4, k.shape)))
    return scale * total, grads


def penalty(layers: Sequence[np.ndarray], mode: str = "trace") -> tuple[float, list[np.ndarray]]:
    if mode == "trace":
        return nuclear_loss(layers), nuclear_loss_grad(layers)
    if mode == "nuclear":
        return unfolding_nuclear_loss(layers)
    raise ConfigError(f"unknown penalty {mode!r}")


def make_regularizer(mode: str = "trace"):
    """Hook for engine.training.fit over the network's spatial conv kernels."""

    def regularize(net: Network) -> tuple[float, Gradients]:
        convs = net.regularized_convs()
        value, grads = penalty([conv.kernel for conv in convs], mode)
        return value, {conv.name: {"kernel": g} for conv, g in zip(convs, grads)}

    return regularize
