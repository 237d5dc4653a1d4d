"""Construction, validation and serialization of skew-symmetric preference games.

A preference matrix ``P`` stores ``P[a, b] = Pr(a beats b) - 1/2``. Sampled
games are rescaled so that ``max |P| = 1/2``, which keeps ``P + 1/2`` a valid
probability table and pins the payoff scale ``L`` to ``1/2``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import make_rng
from .exceptions import InvalidDimensionError
from .validation import NORM_TOL, SKEW_TOL, check_preference_matrix

__all__ = [
    "GameInstance",
    "ValidationReport",
    "orthonormal_complement",
    "preference_probability",
    "rps_matrix",
    "sample_preference_matrix",
    "validate_preference_matrix",
]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GameInstance:
    """A preference matrix plus the sampler metadata that produced it."""

    matrix: np.ndarray
    m: int = 0
    seed: int = 0
    planted_equilibria: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix))
        object.__setattr__(
            self, "planted_equilibria", tuple(_frozen(v) for v in self.planted_equilibria)
        )

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": int(self.m),
            "seed": int(self.seed),
            "entries": [float(x) for x in self.matrix.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GameInstance":
        n = int(d["n"])
        entries = np.asarray(d["entries"], dtype=float)
        if entries.size != n * n:
            raise InvalidDimensionError(f"expected {n * n} entries, got {entries.size}")
        P = check_preference_matrix(entries.reshape(n, n))
        return cls(P, m=int(d.get("m", 0)), seed=int(d.get("seed", 0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "GameInstance":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "GameInstance":
        return cls.from_json(Path(path).read_text())


def orthonormal_complement(V: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the complement of ``span(V[0], ..., V[m-1])`` in R^n.

    The basis is the Gram-Schmidt continuation of ``v_1..v_m, e_1..e_{n-m}``,
    computed by a QR factorisation whose ``R`` diagonal is forced positive, so
    it is unique and reproducible in any precision.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    m, n = V.shape
    if m == 0:
        return np.eye(n)
    X = np.concatenate([V.T, np.eye(n)[:, : n - m]], axis=1)
    Q, R = np.linalg.qr(X)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q = Q * signs
    return Q[:, m:]


def sample_preference_matrix(n: int, m: int, seed: int) -> GameInstance:
    """Sample a normalized preference game whose equilibria contain ``m`` planted policies.

    ``v_1..v_m`` are drawn componentwise uniform on (0, 1), the skew block comes
    from a standard-normal ``A`` and ``P = M (A - A^T) M^T`` with ``M`` an
    orthonormal basis of the complement of the ``v_i``. Same ``(n, m, seed)``
    gives bit-identical output.
    """
    n, m = int(n), int(m)
    if n < 2:
        raise InvalidDimensionError(f"need n >= 2, got n={n}")
    if not 0 <= m < n:
        raise InvalidDimensionError(f"need 0 <= m < n, got m={m}, n={n}")
    rng = make_rng(seed, n, m)
    # 1 - U[0, 1) lies in (0, 1], so every coordinate is strictly positive
    V = 1.0 - rng.random((m, n))
    A = rng.standard_normal((n - m, n - m))
    M = orthonormal_complement(V) if m else np.eye(n)
    P = M @ (A - A.T) @ M.T
    P = 0.5 * (P - P.T)
    np.fill_diagonal(P, 0.0)
    scale = np.max(np.abs(P))
    # tiny blocks (n - m == 1) are exactly zero; scale is round-off there
    if scale > 1e-12:
        P = (P / scale) * 0.5
    else:
        P = np.zeros_like(P)
    planted = tuple(v / v.sum() for v in V)
    return GameInstance(P, m=m, seed=int(seed), planted_equilibria=planted)


def rps_matrix() -> np.ndarray:
    """Rock-paper-scissors with entries +-1/2."""
    return _frozen([[0.0, 0.5, -0.5], [-0.5, 0.0, 0.5], [0.5, -0.5, 0.0]])


@dataclass(frozen=True)
class ValidationReport:
    skew_defect: float
    diagonal_defect: float
    normalization_defect: float
    passed: bool


def validate_preference_matrix(P) -> ValidationReport:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidDimensionError(f"preference matrix must be square, got shape {P.shape}")
    skew = float(np.max(np.abs(P + P.T))) if P.size else 0.0
    diag = float(np.max(np.abs(np.diag(P)))) if P.size else 0.0
    norm = max(0.0, float(np.max(np.abs(P))) - 0.5) if P.size else 0.0
    passed = skew <= SKEW_TOL and diag <= SKEW_TOL and norm <= NORM_TOL
    return ValidationReport(skew, diag, norm, passed)


def preference_probability(P, a: int, b: int) -> float:
    """Probability that action ``a`` is preferred over ``b``."""
    P = np.asarray(P)
    n = P.shape[0]
    if not (0 <= a < n and 0 <= b < n):
        raise IndexError(f"actions ({a}, {b}) out of range for {n} actions")
    if a == b:
        return 0.5
    return float(P[a, b]) + 0.5
