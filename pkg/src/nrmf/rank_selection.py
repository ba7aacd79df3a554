"""Energy-threshold Tucker-2 rank selection on the Gram spectra of a kernel."""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from nrmf.eig import gram_eig
from nrmf.errors import ConfigError, DegenerateEnergyError
from nrmf.tensor_core import as_tensor4, matricize_mode3, matricize_mode4

logger = logging.getLogger(__name__)

METHOD_NRMF = "NRMF"
METHOD_VBMF = "VBMF"


@dataclass(frozen=True)
class RankPair:
    """Selected (r3, r4) for one conv layer and the spectrum evidence behind it."""

    layer: str
    s: int
    t: int
    r3: int
    r4: int
    e1: float
    e2: float
    retained1: float
    retained2: float
    method: str = METHOD_NRMF

    @property
    def ranks(self) -> tuple[int, int]:
        return self.r3, self.r4

    def with_ranks(self, r3: int, r4: int) -> "RankPair":
        values = asdict(self)
        values.update(r3=r3, r4=r4)
        return RankPair(**values)

    @classmethod
    def full(cls, layer: str, s: int, t: int, method: str = METHOD_NRMF) -> "RankPair":
        return cls(layer, s, t, s, t, 0.0, 0.0, 1.0, 1.0, method)


def energy_rank(eigenvalues: np.ndarray, p: float) -> tuple[int, float]:
    """
    Smallest R with sum(eig[:R]) / sum(eig) >= p, and the fraction it keeps.

    eigenvalues must be non-negative and sorted in non-increasing order.
    """
    if not 0 < p <= 1:
        raise ConfigError(f"p must lie in (0, 1], got {p}")
    cumulative = np.cumsum(np.asarray(eigenvalues, dtype=np.float64))
    total = cumulative[-1] if cumulative.size else 0.0
    if not total > 0:
        raise DegenerateEnergyError("spectrum has zero energy; no rank reaches the threshold")
    fractions = cumulative / total
    rank = int(np.argmax(fractions >= p)) + 1
    return rank, float(fractions[rank - 1])


def spectra(kernel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Descending eigenvalues of W1 W1^T and W2 W2^T."""
    kernel = as_tensor4(kernel)
    return gram_eig(matricize_mode3(kernel)).eigenvalues, gram_eig(matricize_mode4(kernel)).eigenvalues


def select_ranks(kernel: np.ndarray, p: float, layer: str = "") -> RankPair:
    kernel = as_tensor4(kernel)
    lam, xi = spectra(kernel)
    try:
        r3, kept3 = energy_rank(lam, p)
        r4, kept4 = energy_rank(xi, p)
    except DegenerateEnergyError as e:
        raise DegenerateEnergyError(f"layer {layer or '<kernel>'}: {e}") from e
    pair = RankPair(
        layer=layer,
        s=kernel.shape[2],
        t=kernel.shape[3],
        r3=r3,
        r4=r4,
        e1=float(np.cumsum(lam)[-1]),
        e2=float(np.cumsum(xi)[-1]),
        retained1=kept3,
        retained2=kept4,
        method=METHOD_NRMF,
    )
    logger.info("%s: p=%.4g ranks (%d, %d) of (%d, %d)", layer or "kernel", p, r3, r4, pair.s, pair.t)
    return pair
