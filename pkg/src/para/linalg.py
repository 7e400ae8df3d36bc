"""Dense linear-algebra primitives.

Matrices are plain 2-D ``float64`` numpy arrays. Everything here is a pure
function of its inputs.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from para.errors import DegenerateColumns, NotOrthonormal, ShapeError

DEGENERACY_RTOL = 1e-12
ORTHONORMAL_ATOL = 1e-8
PIVOT_TOL = 1e-10


def as_matrix(m, name="matrix"):
    """Coerce ``m`` to a finite 2-D float64 array or raise ShapeError."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class QrResult:
    q: np.ndarray
    r_factor: np.ndarray


def qr_thin(b) -> QrResult:
    """Thin QR factorization with a nonnegative diagonal in R.

    Raises:
        ShapeError: if ``b`` has fewer rows than columns.
        DegenerateColumns: if ``b`` is not of full column rank, judged by the
            smallest diagonal entry of R against ``1e-12 * ||b||_F``.
    """
    b = as_matrix(b, "b")
    rows, cols = b.shape
    if cols < 1 or rows < cols:
        raise ShapeError(f"qr_thin needs rows >= cols >= 1, got {b.shape}")
    q, r = np.linalg.qr(b, mode="reduced")
    diag = np.abs(np.diag(r))
    scale = np.linalg.norm(b)
    if scale == 0.0 or diag.min() <= DEGENERACY_RTOL * scale:
        raise DegenerateColumns(
            f"columns are linearly dependent (min pivot {diag.min():.3e}, ||b||_F {scale:.3e})"
        )
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return QrResult(q=q * signs, r_factor=np.triu(r * signs[:, None]))


def singular_values(m) -> np.ndarray:
    m = as_matrix(m)
    if m.size == 0:
        return np.zeros(0)
    return np.linalg.svd(m, compute_uv=False)


def default_rank_tol(m) -> float:
    s = singular_values(m)
    if s.size == 0:
        return 0.0
    return 1e-9 * max(m.shape) * float(s[0])


def numerical_rank(m, tol=None) -> int:
    """Number of singular values strictly above ``tol``.

    The default tolerance is ``1e-9 * max(rows, cols) * sigma_max``.
    """
    m = as_matrix(m)
    s = singular_values(m)
    if s.size == 0:
        return 0
    if tol is None:
        tol = 1e-9 * max(m.shape) * float(s[0])
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return int(np.count_nonzero(s > tol))


def nullity(m, tol=None) -> int:
    m = as_matrix(m)
    return m.shape[1] - numerical_rank(m, tol)


def orthonormality_error(q) -> float:
    q = as_matrix(q, "q")
    if q.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(q.T @ q - np.eye(q.shape[1]))))


def check_orthonormal(q, atol=ORTHONORMAL_ATOL):
    q = as_matrix(q, "q")
    err = orthonormality_error(q)
    if err > atol:
        raise NotOrthonormal(f"||Q^T Q - I||_max = {err:.3e} exceeds {atol:g}")
    return q


def projector(q) -> np.ndarray:
    """Orthogonal projector ``Q Q^T`` onto the span of orthonormal columns."""
    q = check_orthonormal(q)
    return q @ q.T


def frobenius_distance(a, b) -> float:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def pivoted_basis(m, tol=PIVOT_TOL) -> np.ndarray:
    """Orthonormal basis for col(m) from column-pivoted QR.

    Columns whose pivot magnitude falls to ``tol`` or below are treated as
    dependent and dropped. Returns a ``rows x k`` matrix, possibly ``k == 0``.
    """
    m = as_matrix(m)
    if m.shape[1] == 0:
        return np.zeros((m.shape[0], 0))
    q, r, _ = scipy.linalg.qr(m, mode="economic", pivoting=True)
    keep = int(np.count_nonzero(np.abs(np.diag(r)) > tol))
    return q[:, :keep]


def column_space_basis(m, tol=None) -> np.ndarray:
    """Orthonormal basis of the column space via SVD."""
    m = as_matrix(m)
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    k = numerical_rank(m, tol)
    return u[:, :k]


def null_space_basis(m, tol=None) -> np.ndarray:
    """Orthonormal basis of the kernel via SVD (``cols x nullity``)."""
    m = as_matrix(m)
    _, _, vt = np.linalg.svd(m, full_matrices=True)
    k = numerical_rank(m, tol)
    return vt[k:].T.copy()
