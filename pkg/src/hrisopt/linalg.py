"""Small complex linear-algebra helpers shared by the model and solver code.

Conventions used throughout the package:
  * vec() stacks columns (Fortran order), so vec(AXB) = (B^T kron A) vec(X).
  * dtilde() keeps only the main diagonal of a square matrix.
"""

import numpy as np
import scipy.linalg


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a Hermitian system is numerically singular."""


def hermitian_solve(h, b, hermitian_tol=1e-10):
    """Solve h x = b for Hermitian positive definite h via Cholesky.

    The matrix is symmetrized as (h + h^H)/2 before factorizing to shed
    round-off asymmetry; inputs whose asymmetry exceeds hermitian_tol
    (relative to the matrix scale) are rejected as contract violations.
    """
    h = np.asarray(h)
    b = np.asarray(b)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    if b.shape[0] != h.shape[0]:
        raise ValueError(f"shape mismatch: {h.shape} vs {b.shape}")
    scale = max(np.abs(h).max(), 1.0)
    asym = np.abs(h - h.conj().T).max()
    if asym > hermitian_tol * scale:
        raise ValueError(f"matrix is not Hermitian (asymmetry {asym:.3e})")
    h = 0.5 * (h + h.conj().T)
    try:
        c, low = scipy.linalg.cho_factor(h, check_finite=False)
    except scipy.linalg.LinAlgError as err:
        raise SingularMatrixError(str(err)) from err
    pivots = np.real(np.diag(c)) ** 2
    if pivots.min() < 1e-14 * max(np.real(np.trace(h)), np.finfo(float).tiny):
        raise SingularMatrixError(
            f"numerically singular (pivot {pivots.min():.3e})"
        )
    return scipy.linalg.cho_solve((c, low), b, check_finite=False)


def kron(a, b):
    """Kronecker product; block (i, j) equals a[i, j] * b."""
    return np.kron(a, b)


def hadamard(a, b):
    """Elementwise product of two equally shaped arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def dtilde(a):
    """Diagonal part of a square matrix, returned as a full matrix."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return np.diag(np.diag(a))


def vec(a):
    """Column-stacking vectorization."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(x, shape):
    """Inverse of vec() for a given 2-D shape."""
    return np.asarray(x).reshape(shape, order="F")
