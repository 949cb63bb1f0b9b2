"""Proximal shrinkage operators.

Scalar operators accept numpy arrays and act element-wise. The matrix
operators also accept stacks of matrices ``(..., m, n)`` so that the batched
solver can reuse them unchanged.
"""

from dataclasses import dataclass

import numpy as np

from lowrank.linalg import check_same_shape, svd

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class WeightVector:
    """Reweighting coefficients ``1 / (|x| + epsilon)``."""

    weights: np.ndarray
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        w = np.asarray(self.weights, dtype=np.float64)
        if not (np.all(np.isfinite(w)) and np.all(w >= 0)):
            raise ValueError("weights must be finite and non-negative")

    @classmethod
    def from_magnitudes(cls, x, epsilon: float = DEFAULT_EPSILON) -> "WeightVector":
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        return cls(1.0 / (np.abs(np.asarray(x, dtype=np.float64)) + epsilon), epsilon)


def soft_threshold(y, beta):
    """``sgn(y) * max(|y| - beta, 0)``."""
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta < 0):
        raise ValueError("beta must be non-negative")
    y = np.asarray(y, dtype=np.float64)
    out = np.sign(y) * np.maximum(np.abs(y) - beta, 0.0)
    return out if out.ndim else float(out)


def p_shrink(y, phi, q):
    """p-shrinkage ``sgn(y) * max(0, |y| - phi * |y|**(q - 1))``.

    Entries with ``y == 0`` map to 0 without evaluating ``0**(q - 1)``.
    With ``q == 1`` this is exactly soft thresholding by ``phi``.
    """
    if not 0 < q <= 1:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(phi < 0):
        raise ValueError("phi must be non-negative")
    y = np.asarray(y, dtype=np.float64)
    mag = np.abs(y)
    nz = mag > 0
    if q == 1:
        shrunk = mag - phi
    else:
        safe = np.where(nz, mag, 1.0)
        with np.errstate(over="ignore", invalid="ignore"):
            # |y|**(q-1) may overflow for subnormal y; a zero threshold still means no shrinkage
            shrunk = np.where(phi > 0, mag - phi * safe ** (q - 1.0), mag)
    out = np.where(nz, np.sign(y) * np.maximum(shrunk, 0.0), 0.0)
    return out if out.ndim else float(out)


def weighted_p_shrink(F, prev_E, lambda_e, mu, q, epsilon=DEFAULT_EPSILON):
    """Element-wise p-shrinkage of ``F`` with reweighted thresholds.

    Each entry uses ``phi = lambda_e * w / mu`` where ``w = 1 / (|prev_E| + epsilon)``.
    Passing ``prev_E=None`` gives unit weights (first iteration). ``mu`` may be
    a scalar or an array broadcastable against ``F``.
    """
    F = np.asarray(F, dtype=np.float64)
    if prev_E is None:
        weights = 1.0
    else:
        check_same_shape(F=F, prev_E=np.asarray(prev_E))
        weights = WeightVector.from_magnitudes(prev_E, epsilon).weights
    return p_shrink(F, lambda_e * weights / mu, q)


def svt(Y, alpha):
    """Singular value thresholding: soft-threshold the spectrum of ``Y`` by ``alpha``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    U, s, Vt = svd(Y)
    return (U * np.maximum(s - alpha, 0.0)[..., None, :]) @ Vt


def weighted_schatten_p_shrink(Y, prev_deltas, lambda_a, mu, p, epsilon=DEFAULT_EPSILON):
    """Weighted Schatten-p shrinkage of the singular values of ``Y``.

    Each singular value is p-shrunk with ``psi_i = lambda_a * omega_i / mu``,
    ``omega_i = 1 / (prev_deltas_i + epsilon)`` (unit weights when
    ``prev_deltas`` is None). The shrunk values are stably re-sorted
    non-ascending before recomposition.

    Returns
    -------
    A : ndarray
        ``U @ diag(deltas) @ Vt``.
    deltas : ndarray
        The recovered singular values, non-ascending.
    """
    U, s, Vt = svd(Y)
    if prev_deltas is None:
        omega = 1.0
    else:
        prev_deltas = np.asarray(prev_deltas, dtype=np.float64)
        if prev_deltas.shape != s.shape:
            raise ValueError(f"prev_deltas has shape {prev_deltas.shape}, expected {s.shape}")
        omega = 1.0 / (prev_deltas + epsilon)
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim:
        mu = mu.reshape(mu.shape[: s.ndim - 1] + (1,))
    # singular values are >= 0, so the sign factor of p-shrinkage is a no-op here
    deltas = p_shrink(s, lambda_a * omega / mu, p)
    deltas = -np.sort(-np.asarray(deltas), axis=-1, kind="stable")
    return (U * deltas[..., None, :]) @ Vt, deltas
