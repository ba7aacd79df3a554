"""Symmetric eigendecomposition by cyclic Jacobi rotations."""

from dataclasses import dataclass

import numpy as np

from nrmf.errors import ConvergenceError, ShapeError, SymmetryError

MAX_SWEEPS = 100
OFF_DIAGONAL_TOL = 1e-12
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class EigResult:
    """Eigenpairs sorted by non-increasing eigenvalue; column i of eigenvectors pairs with eigenvalue i."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0


def _off_norm(a: np.ndarray) -> float:
    upper = np.triu(a, 1)
    return float(np.sqrt(2.0 * np.sum(upper * upper)))


def _check_symmetric(a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"sym_eig needs a square matrix, got shape {a.shape}")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0:
        return
    asym = float(np.max(np.abs(a - a.T)))
    if asym > SYMMETRY_TOL * scale:
        raise SymmetryError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")


def _rotate(a: np.ndarray, v: np.ndarray, p: int, q: int) -> None:
    """Zero a[p, q] in place with one Jacobi rotation, accumulating it into v."""
    apq = a[p, q]
    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
    if theta < 0.0:
        t = -t
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c

    col_p = a[:, p].copy()
    col_q = a[:, q].copy()
    a[:, p] = c * col_p - s * col_q
    a[:, q] = s * col_p + c * col_q
    row_p = a[p, :].copy()
    row_q = a[q, :].copy()
    a[p, :] = c * row_p - s * row_q
    a[q, :] = s * row_p + c * row_q
    a[p, q] = 0.0
    a[q, p] = 0.0

    vp = v[:, p].copy()
    vq = v[:, q].copy()
    v[:, p] = c * vp - s * vq
    v[:, q] = s * vp + c * vq


def sym_eig(
    a: np.ndarray,
    tol: float = OFF_DIAGONAL_TOL,
    *,
    max_sweeps: int = MAX_SWEEPS,
    psd: bool = False,
) -> EigResult:
    """
    Eigendecomposition of a real symmetric matrix.

    Sweeps the strict upper triangle row by row until the off-diagonal
    Frobenius norm drops below tol * ||A||_F. Equal eigenvalues keep the
    order of their original diagonal position. With psd=True, negative
    eigenvalues left over from roundoff are clamped to zero.
    """
    a = np.asarray(a, dtype=np.float64)
    _check_symmetric(a)
    n = a.shape[0]
    work = 0.5 * (a + a.T)
    vectors = np.eye(n)
    norm = float(np.linalg.norm(work))
    threshold = tol * norm

    sweeps = 0
    off = _off_norm(work)
    while off > threshold:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", off)
        for p in range(n - 1):
            for q in range(p + 1, n):
                if work[p, q] != 0.0:
                    _rotate(work, vectors, p, q)
        sweeps += 1
        off = _off_norm(work)

    values = np.diag(work).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    if psd:
        values = np.maximum(values, 0.0)
    return EigResult(eigenvalues=values, eigenvectors=np.ascontiguousarray(vectors), sweeps=sweeps)


def gram_eig(m: np.ndarray) -> EigResult:
    """Eigenpairs of M M^T; the eigenvalues are the squared singular values of M."""
    m = np.asarray(m, dtype=np.float64)
    return sym_eig(m @ m.T, psd=True)
