"""
Empirical variational Bayesian matrix factorization (EVBMF) rank estimates.

Follows the global analytic solution of Nakajima et al. (JMLR 2013): the
noise variance sigma^2 minimizes the VB free energy, singular values above
sqrt(M * sigma^2 * xubar) are kept and shrunk, and the rest are noise.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from nrmf.errors import DegenerateInputError, ShapeError
from nrmf.rank_selection import METHOD_VBMF, RankPair
from nrmf.tensor_core import as_tensor4, matricize_mode3, matricize_mode4

logger = logging.getLogger(__name__)

TAU_COEFF = 2.5129
BRACKET_TOL = 1e-12
# Singular values below this fraction of the largest are treated as exact zeros.
ZERO_FLOOR = 1e-15
# sigma^2 never drops below this fraction of its upper bound.
SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class VbmfEstimate:
    rank: int
    sigma2: float
    singular_values: np.ndarray
    shrunk: np.ndarray
    threshold: float


def _tau(x: np.ndarray, alpha: float) -> np.ndarray:
    return 0.5 * (x - (1 + alpha) + np.sqrt(np.maximum((x - (1 + alpha)) ** 2 - 4 * alpha, 0.0)))


def _free_energy(sigma2: float, l: int, m: int, s: np.ndarray, xubar: float) -> float:
    """EVB free energy (up to constants) as a function of the noise variance."""
    alpha = l / m
    x = s**2 / (m * sigma2)
    z1 = x[x > xubar]
    z2 = x[x <= xubar]
    tau_z1 = _tau(z1, alpha)
    return float(
        np.sum(z2 - np.log(z2))
        + np.sum(z1 - tau_z1)
        + np.sum(np.log((tau_z1 + 1) / z1))
        + alpha * np.sum(np.log(tau_z1 / alpha + 1))
    )


def _minimize_sigma2(l: int, m: int, s: np.ndarray, xubar: float, lower: float, upper: float) -> float:
    """
    Minimize the free energy over [lower, upper].

    The objective changes form wherever a singular value crosses the
    threshold, at sigma^2 = s_h^2 / (M * xubar); each piece between those
    breakpoints is searched separately and the best candidate wins.
    """
    breaks = s**2 / (m * xubar)
    edges = np.unique(np.concatenate([[lower, upper], breaks[(breaks > lower) & (breaks < upper)]]))
    best_x, best_f = upper, _free_energy(upper, l, m, s, xubar)
    for lo, hi in zip(edges[:-1], edges[1:]):
        for candidate in (lo, hi):
            value = _free_energy(candidate, l, m, s, xubar)
            if value < best_f:
                best_x, best_f = candidate, value
        if hi - lo <= BRACKET_TOL * hi:
            continue
        res = optimize.minimize_scalar(
            _free_energy,
            args=(l, m, s, xubar),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": BRACKET_TOL * hi},
        )
        if res.fun < best_f:
            best_x, best_f = float(res.x), float(res.fun)
    return best_x


def vbmf_rank(observation: np.ndarray) -> VbmfEstimate:
    """EVBMF rank and noise variance of a matrix; wide and tall inputs are handled alike."""
    y = np.asarray(observation, dtype=np.float64)
    if y.ndim != 2 or min(y.shape) < 1:
        raise ShapeError(f"observation must be a non-empty matrix, got shape {y.shape}")
    if y.shape[0] > y.shape[1]:
        y = y.T
    l, m = y.shape
    s = np.linalg.svd(y, compute_uv=False)
    scale = float(s[0])
    if not scale > 0 or not np.isfinite(scale):
        raise DegenerateInputError("observation matrix is zero")

    sn = np.maximum(s / scale, ZERO_FLOOR)
    alpha = l / m
    tauubar = TAU_COEFF * np.sqrt(alpha)
    xubar = (1 + tauubar) * (1 + alpha / tauubar)

    eh_ub = int(min(np.ceil(l / (1 + alpha)) - 1, l)) - 1
    upper = float(np.sum(sn**2)) / (l * m)
    lower = max(sn[eh_ub + 1] ** 2 / (m * xubar), float(np.mean(sn[eh_ub + 1 :] ** 2)) / m)
    lower = min(max(lower, SIGMA2_FLOOR * upper), upper)
    sigma2 = _minimize_sigma2(l, m, sn, xubar, lower, upper)

    threshold = np.sqrt(m * sigma2 * xubar)
    rank = int(np.sum(sn > threshold))
    kept = sn[:rank]
    ratio = (l + m) * sigma2 / kept**2
    shrunk = 0.5 * kept * (1 - ratio + np.sqrt(np.maximum((1 - ratio) ** 2 - 4 * l * m * sigma2**2 / kept**4, 0.0)))
    return VbmfEstimate(
        rank=rank,
        sigma2=sigma2 * scale**2,
        singular_values=s[:rank].copy(),
        shrunk=shrunk * scale,
        threshold=float(threshold * scale),
    )


def _retained(s: np.ndarray, rank: int) -> float:
    energy = s**2
    return float(energy[:rank].sum() / energy.sum())


def vbmf_rank_pair(kernel: np.ndarray, layer: str = "") -> RankPair:
    """
    EVBMF ranks of the mode-3 and mode-4 unfoldings.

    A zero rank estimate is promoted to 1 since a conv stage needs at least
    one channel.
    """
    kernel = as_tensor4(kernel)
    ranks = []
    energies = []
    kept = []
    for unfolding in (matricize_mode3(kernel), matricize_mode4(kernel)):
        est = vbmf_rank(unfolding)
        rank = est.rank
        if rank == 0:
            logger.warning("%s: VBMF estimated rank 0, using 1", layer or "kernel")
            rank = 1
        s = np.linalg.svd(unfolding, compute_uv=False)
        ranks.append(rank)
        energies.append(float(np.sum(s**2)))
        kept.append(_retained(s, rank))
    pair = RankPair(
        layer=layer,
        s=kernel.shape[2],
        t=kernel.shape[3],
        r3=ranks[0],
        r4=ranks[1],
        e1=energies[0],
        e2=energies[1],
        retained1=kept[0],
        retained2=kept[1],
        method=METHOD_VBMF,
    )
    logger.info("%s: VBMF ranks (%d, %d) of (%d, %d)", layer or "kernel", pair.r3, pair.r4, pair.s, pair.t)
    return pair
