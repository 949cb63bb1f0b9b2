"""Dense matrix helpers: validation, thin SVD and the norms the solvers use.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 (row-major).
"""

from typing import NamedTuple

import numpy as np


class SvdError(ArithmeticError):
    """The SVD did not converge or received non-finite input."""


class SvdFactors(NamedTuple):
    U: np.ndarray
    singular_values: np.ndarray
    Vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.Vt


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float64 array, raising ``ValueError`` otherwise."""
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


def check_same_shape(**arrays: np.ndarray) -> None:
    shapes = {k: np.shape(v) for k, v in arrays.items()}
    if len(set(shapes.values())) > 1:
        desc = ", ".join(f"{k}={s}" for k, s in shapes.items())
        raise ValueError(f"shape mismatch: {desc}")


def svd(M) -> SvdFactors:
    """Thin SVD ``M = U @ diag(s) @ Vt`` with ``r = min(m, n)``.

    Singular values come back non-ascending. Works on stacks of matrices
    (``(..., m, n)``) as well, which the batched solver relies on.
    """
    arr = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise SvdError("SVD input contains NaN or Inf entries")
    try:
        U, s, Vt = np.linalg.svd(arr, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdError(f"SVD did not converge: {exc}") from exc
    return SvdFactors(U, s, Vt)


def frobenius_norm(M) -> float:
    arr = np.asarray(M, dtype=np.float64)
    return float(np.sqrt(np.sum(arr * arr)))


def spectral_norm(M) -> float:
    """Largest singular value of ``M``."""
    s = svd(M).singular_values
    return float(s[0]) if s.size else 0.0
