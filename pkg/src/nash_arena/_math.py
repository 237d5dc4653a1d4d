"""Small numerical helpers on the probability simplex."""
from __future__ import annotations

import numpy as np

from .exceptions import DomainError


def gauge(theta: np.ndarray) -> np.ndarray:
    """Shift logits to the sum-zero gauge."""
    theta = np.asarray(theta, dtype=float)
    return theta - theta.mean()


# max-shifted by hand: scipy's logsumexp costs ~20us per call on tiny vectors,
# which dominates long tabular runs
def log_softmax(theta: np.ndarray) -> np.ndarray:
    s = np.asarray(theta, dtype=float)
    s = s - s.max()
    return s - np.log(np.exp(s).sum())


def softmax(theta: np.ndarray) -> np.ndarray:
    s = np.asarray(theta, dtype=float)
    z = np.exp(s - s.max())
    return z / z.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """D_KL(p || q) for strictly positive ``q``; zero entries of ``p`` contribute 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise DomainError("KL divergence needs a strictly positive second argument")
    if np.all(p > 0):
        return float(p @ (np.log(p) - np.log(q)))
    mask = p > 0
    return float(p[mask] @ (np.log(p[mask]) - np.log(q[mask])))


def require_positive(pi: np.ndarray, name: str = "policy") -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if np.any(~(pi > 0)):
        raise DomainError(f"{name} must be strictly positive")
    return pi
