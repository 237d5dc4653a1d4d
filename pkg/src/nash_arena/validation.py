"""Input validation helpers shared by the estimators and functional API."""
from __future__ import annotations

import numpy as np

from .exceptions import InvalidDimensionError

SKEW_TOL = 1e-12
NORM_TOL = 1e-12
POLICY_SUM_TOL = 1e-12


def check_preference_matrix(P, *, skew_tol: float = SKEW_TOL, normalized: bool = True) -> np.ndarray:
    """Validate and return ``P`` as a float array.

    Raises ``InvalidDimensionError`` for non-square input and ``ValueError``
    when ``P`` is not skew-symmetric or (if ``normalized``) has entries
    outside ``[-1/2, 1/2]``.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidDimensionError(f"preference matrix must be square, got shape {P.shape}")
    if P.shape[0] < 1:
        raise InvalidDimensionError("preference matrix must be non-empty")
    if not np.all(np.isfinite(P)):
        raise ValueError("preference matrix has non-finite entries")
    skew = float(np.max(np.abs(P + P.T)))
    if skew > skew_tol:
        raise ValueError(f"preference matrix is not skew-symmetric (defect {skew:.3g})")
    if normalized and float(np.max(np.abs(P))) > 0.5 + NORM_TOL:
        raise ValueError("preference matrix entries must lie in [-1/2, 1/2]")
    return P


def check_policy(pi, n: int | None = None, *, strictly_positive: bool = False,
                 atol: float = POLICY_SUM_TOL, name: str = "policy") -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1:
        raise InvalidDimensionError(f"{name} must be one-dimensional")
    if n is not None and pi.shape[0] != n:
        raise InvalidDimensionError(f"{name} has length {pi.shape[0]}, expected {n}")
    if not np.all(np.isfinite(pi)) or np.any(pi < 0):
        raise ValueError(f"{name} must be finite and nonnegative")
    if strictly_positive and np.any(pi <= 0):
        raise ValueError(f"{name} must be strictly positive")
    if abs(pi.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1 (got {pi.sum():.17g})")
    return pi
