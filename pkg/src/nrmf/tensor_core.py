"""
Dense kernel tensors: reshaping, matricization, k-mode products and Tucker-2.

A kernel (Tensor4) is a C-ordered float64 array of shape (D_h, D_w, S, T):
the last index runs fastest. Modes are numbered from 1, so mode 3 is the
input-channel axis and mode 4 the output-channel axis.

Mode-3 unfolding: W1[s, t*D_h*D_w + h*D_w + w] = K[h, w, s, t]   (S x T*D_h*D_w)
Mode-4 unfolding: W2[t, s*D_h*D_w + h*D_w + w] = K[h, w, s, t]   (T x S*D_h*D_w)
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from nrmf.eig import gram_eig
from nrmf.errors import RankError, ShapeError

ORTHONORMAL_TOL = 1e-10


def as_tensor4(k: np.ndarray) -> np.ndarray:
    """Validate and return a kernel as a C-ordered float64 array."""
    arr = np.ascontiguousarray(k, dtype=np.float64)
    if arr.ndim != 4 or min(arr.shape) < 1:
        raise ShapeError(f"kernel must have four dims >= 1, got shape {arr.shape}")
    return arr


def reshape(t: np.ndarray, new_dims: Sequence[int]) -> np.ndarray:
    """Reshape in linearization order; returns a new array and leaves t untouched."""
    arr = np.asarray(t, dtype=np.float64)
    dims = tuple(int(d) for d in new_dims)
    if any(d < 1 for d in dims):
        raise ShapeError(f"dims must be positive, got {dims}")
    if int(np.prod(dims)) != arr.size:
        raise ShapeError(f"cannot reshape {arr.size} elements into {dims}")
    return np.array(arr.reshape(dims), copy=True)


def matricize_mode3(k: np.ndarray) -> np.ndarray:
    k = as_tensor4(k)
    return np.ascontiguousarray(np.transpose(k, (2, 3, 0, 1))).reshape(k.shape[2], -1)


def matricize_mode4(k: np.ndarray) -> np.ndarray:
    k = as_tensor4(k)
    return np.ascontiguousarray(np.transpose(k, (3, 2, 0, 1))).reshape(k.shape[3], -1)


def dematricize_mode3(m: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of matricize_mode3 for a kernel of shape dims."""
    dh, dw, s, t = dims
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (s, t * dh * dw):
        raise ShapeError(f"mode-3 unfolding of {tuple(dims)} must be {(s, t * dh * dw)}, got {m.shape}")
    return np.ascontiguousarray(np.transpose(m.reshape(s, t, dh, dw), (2, 3, 0, 1)))


def dematricize_mode4(m: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of matricize_mode4 for a kernel of shape dims."""
    dh, dw, s, t = dims
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (t, s * dh * dw):
        raise ShapeError(f"mode-4 unfolding of {tuple(dims)} must be {(t, s * dh * dw)}, got {m.shape}")
    return np.ascontiguousarray(np.transpose(m.reshape(t, s, dh, dw), (2, 3, 1, 0)))


def kmode_product(g: np.ndarray, u: np.ndarray, k: int) -> np.ndarray:
    """
    k-mode product g x_k u for a matrix u of shape (J, R_k).

    out[i_1, ..., j, ..., i_N] = sum_r g[i_1, ..., r, ..., i_N] * u[j, r]
    """
    g = np.asarray(g, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if not 1 <= k <= g.ndim:
        raise ShapeError(f"mode {k} out of range for a {g.ndim}-way tensor")
    if u.ndim != 2 or u.shape[1] != g.shape[k - 1]:
        raise ShapeError(
            f"mode-{k} product needs a matrix with {g.shape[k - 1]} columns, got shape {u.shape}"
        )
    out = np.tensordot(u, g, axes=([1], [k - 1]))
    return np.ascontiguousarray(np.moveaxis(out, 0, k - 1))


def full_multilinear(
    g: np.ndarray,
    factors: Sequence[np.ndarray | None],
    order: Sequence[int] | None = None,
) -> np.ndarray:
    """
    g x_1 U1 x_2 U2 ... x_N UN. A None factor leaves its mode unchanged.

    order lists the 1-based modes in the sequence they are applied; the
    result does not depend on it.
    """
    g = np.asarray(g, dtype=np.float64)
    if len(factors) != g.ndim:
        raise ShapeError(f"need {g.ndim} factors, got {len(factors)}")
    modes = list(order) if order is not None else list(range(1, g.ndim + 1))
    if sorted(modes) != list(range(1, g.ndim + 1)):
        raise ShapeError(f"order must be a permutation of modes 1..{g.ndim}, got {modes}")
    out = g
    for mode in modes:
        factor = factors[mode - 1]
        if factor is not None:
            out = kmode_product(out, factor, mode)
    return out


@dataclass(frozen=True)
class Tucker2Factors:
    """K ~= core x_3 u3 x_4 u4 with u3 (S x R3), core (D_h x D_w x R3 x R4), u4 (T x R4)."""

    u3: np.ndarray
    core: np.ndarray
    u4: np.ndarray

    def __post_init__(self):
        if self.u3.ndim != 2 or self.u4.ndim != 2 or self.core.ndim != 4:
            raise ShapeError("Tucker-2 factors need 2-D u3/u4 and a 4-way core")
        if self.core.shape[2] != self.u3.shape[1] or self.core.shape[3] != self.u4.shape[1]:
            raise ShapeError(
                f"core {self.core.shape} does not match u3 {self.u3.shape} and u4 {self.u4.shape}"
            )

    @property
    def ranks(self) -> tuple[int, int]:
        return self.u3.shape[1], self.u4.shape[1]

    @property
    def kernel_shape(self) -> tuple[int, int, int, int]:
        dh, dw = self.core.shape[:2]
        return dh, dw, self.u3.shape[0], self.u4.shape[0]

    def is_orthonormal(self, tol: float = ORTHONORMAL_TOL) -> bool:
        for u in (self.u3, self.u4):
            gram = u.T @ u
            if not np.allclose(gram, np.eye(gram.shape[0]), rtol=0.0, atol=tol):
                return False
        return True


def _check_ranks(dims: tuple[int, ...], r3: int, r4: int) -> None:
    s, t = dims[2], dims[3]
    if not 1 <= r3 <= s:
        raise RankError(f"r3={r3} outside 1..{s}")
    if not 1 <= r4 <= t:
        raise RankError(f"r4={r4} outside 1..{t}")


def _project(k: np.ndarray, u3: np.ndarray, u4: np.ndarray) -> np.ndarray:
    return kmode_product(kmode_product(k, u3.T, 3), u4.T, 4)


def tucker2_decompose(k: np.ndarray, r3: int, r4: int) -> Tucker2Factors:
    """Truncated HOSVD on the two channel modes."""
    k = as_tensor4(k)
    _check_ranks(k.shape, r3, r4)
    u3 = gram_eig(matricize_mode3(k)).eigenvectors[:, :r3]
    u4 = gram_eig(matricize_mode4(k)).eigenvectors[:, :r4]
    u3 = np.ascontiguousarray(u3)
    u4 = np.ascontiguousarray(u4)
    return Tucker2Factors(u3=u3, core=_project(k, u3, u4), u4=u4)


def tucker2_reconstruct(f: Tucker2Factors) -> np.ndarray:
    return kmode_product(kmode_product(f.core, f.u3, 3), f.u4, 4)


def tucker2_error(k: np.ndarray, f: Tucker2Factors) -> float:
    """Frobenius norm of k - reconstruct(f)."""
    k = as_tensor4(k)
    if f.kernel_shape != k.shape:
        raise ShapeError(f"factors describe {f.kernel_shape}, kernel is {k.shape}")
    return float(np.linalg.norm(k - tucker2_reconstruct(f)))


def discarded_energy(k: np.ndarray, r3: int, r4: int) -> tuple[float, float]:
    """Gram eigenvalue mass dropped by truncating mode 3 to r3 and mode 4 to r4."""
    k = as_tensor4(k)
    _check_ranks(k.shape, r3, r4)
    lam = gram_eig(matricize_mode3(k)).eigenvalues
    xi = gram_eig(matricize_mode4(k)).eigenvalues
    return float(lam[r3:].sum()), float(xi[r4:].sum())


def tucker2_hooi(
    k: np.ndarray,
    r3: int,
    r4: int,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    *,
    max_iter: int = 100,
    tol: float = 1e-12,
) -> Tucker2Factors:
    """
    Alternating least squares (higher-order orthogonal iteration) on modes 3 and 4.

    Starts from init=(u3, u4) when given, otherwise from the truncated HOSVD.
    Each half-step solves for one factor with the other fixed, so the
    reconstruction error never increases.
    """
    k = as_tensor4(k)
    _check_ranks(k.shape, r3, r4)
    if init is None:
        start = tucker2_decompose(k, r3, r4)
        u3, u4 = start.u3, start.u4
    else:
        u3, u4 = (np.asarray(u, dtype=np.float64) for u in init)
        if u3.shape != (k.shape[2], r3) or u4.shape != (k.shape[3], r4):
            raise ShapeError(f"init factors {u3.shape}, {u4.shape} do not match ranks ({r3}, {r4})")

    norm_sq = float(np.sum(k * k))
    previous = np.inf
    for _ in range(max_iter):
        partial = kmode_product(k, u4.T, 4)
        u3 = np.ascontiguousarray(gram_eig(matricize_mode3(partial)).eigenvectors[:, :r3])
        partial = kmode_product(k, u3.T, 3)
        u4 = np.ascontiguousarray(gram_eig(matricize_mode4(partial)).eigenvectors[:, :r4])
        core = _project(k, u3, u4)
        # With orthonormal factors ||K - K_hat||^2 = ||K||^2 - ||core||^2.
        err_sq = max(norm_sq - float(np.sum(core * core)), 0.0)
        if previous - err_sq <= tol * max(norm_sq, 1.0):
            break
        previous = err_sq
    return Tucker2Factors(u3=u3, core=_project(k, u3, u4), u4=u4)
