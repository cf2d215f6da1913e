"""Dense real linear algebra used throughout the package.

Matrices are plain 2-D ``float64`` numpy arrays. Vectorization is
column-stacking, so ``vec(w.T)`` is the row-major flattening of ``w``;
every Kronecker-structured block in :mod:`resnest_lab.hessian` is written
against that convention.

SVD and symmetric eigendecomposition come from the Jacobi kernels in
:mod:`resnest_lab.kernels`, not LAPACK.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InputError, ShapeError

EPS = np.finfo(np.float64).eps
SYMMETRY_RTOL = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 array (1-D input becomes a column)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InputError(f"{name} contains non-finite entries")
    return m


def kron(a, b) -> np.ndarray:
    """Kronecker product; block ``(i, j)`` of the result is ``a[i, j] * b``."""
    return kernels.kron(np.ascontiguousarray(as_matrix(a, "a")),
                        np.ascontiguousarray(as_matrix(b, "b")))


def vec(a) -> np.ndarray:
    """Column-stacking vectorization, returned as a column vector."""
    a = as_matrix(a)
    return a.reshape(-1, order="F")[:, None].copy()


def unvec(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != rows * cols:
        raise ShapeError(f"cannot unvec {v.size} entries into {rows}x{cols}")
    return v.reshape((rows, cols), order="F").copy()


def svd(a) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``a = u @ diag(s) @ vt`` with ``s`` sorted descending.

    ``u`` is ``m x k`` and ``vt`` is ``k x n`` with ``k = min(m, n)``.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m >= n:
        u, s, v, _ = kernels.jacobi_svd(np.ascontiguousarray(a))
    else:
        v, s, u, _ = kernels.jacobi_svd(np.ascontiguousarray(a.T))
    order = np.argsort(-s, kind="stable")
    return u[:, order], s[order], v[:, order].T


def singular_values(a) -> np.ndarray:
    return svd(a)[1]


def default_tol(shape: tuple[int, int], sigma_max: float) -> float:
    """Standard SVD cutoff ``max(m, n) * eps * sigma_max``."""
    return max(shape) * EPS * sigma_max


def _cutoff(a: np.ndarray, s: np.ndarray, tol: float | None) -> float:
    if tol is None:
        return default_tol(a.shape, s[0] if s.size else 0.0)
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return tol


def pinv(a, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD, discarding singular values <= tol."""
    a = as_matrix(a)
    u, s, vt = svd(a)
    cut = _cutoff(a, s, tol)
    keep = s > cut
    if not np.any(keep):
        return np.zeros((a.shape[1], a.shape[0]))
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def rank(a, tol: float | None = None) -> int:
    """Number of singular values strictly above ``tol``."""
    a = as_matrix(a)
    s = singular_values(a)
    return int(np.sum(s > _cutoff(a, s, tol)))


def null_space(a, tol: float | None = None) -> np.ndarray:
    """Orthonormal basis (as columns) of the numerical null space of ``a``."""
    a = as_matrix(a)
    m, n = a.shape
    if m < n:
        padded = np.vstack([a, np.zeros((n - m, n))])
    else:
        padded = a
    _, s, vt = svd(padded)
    cut = _cutoff(a, s, tol)
    return vt[s <= cut].T.copy()


@dataclass(frozen=True)
class EigResult:
    """Eigenvalues sorted ascending; column ``j`` of ``eigenvectors`` pairs with ``eigenvalues[j]``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])


def sym_eig(a) -> EigResult:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"sym_eig needs a square matrix, got {a.shape}")
    fro = np.linalg.norm(a)
    asym = np.linalg.norm(a - a.T)
    if asym > SYMMETRY_RTOL * max(fro, 1.0):
        raise InputError(f"matrix is not symmetric (||A - A^T||_F = {asym:.3e})")
    sym = np.ascontiguousarray(0.5 * (a + a.T))
    w, v, sweeps = kernels.jacobi_eigh(sym)
    order = np.argsort(w, kind="stable")
    return EigResult(eigenvalues=w[order].copy(), eigenvectors=v[:, order].copy(), sweeps=int(sweeps))


def lstsq(a, b) -> np.ndarray:
    """Minimum-Frobenius-norm minimizer of ``||a @ x - b||_F``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"lstsq row mismatch: a has {a.shape[0]} rows, b has {b.shape[0]}")
    return pinv(a) @ b
