"""Geometry of the equilibrium set of a skew-symmetric game.

For a game with a full-support equilibrium, the equilibria are exactly the
policies with ``P @ pi == 0``. The set is ``anchor + span(basis)`` intersected
with the simplex, where ``basis`` spans ``{r : P r = 0, sum(r) = 0}``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linprog

from ._math import kl_divergence, require_positive
from ._rng import make_rng
from .exceptions import AssumptionViolatedError, ConvergenceError, InvalidDimensionError
from .validation import check_policy, check_preference_matrix

__all__ = [
    "ConstantsReport",
    "NashSet",
    "duality_gap",
    "instance_constants",
    "interior_ne",
    "kl_project",
    "kernel_basis",
    "restricted_singular_values",
    "sum_zero_basis",
]

NULL_RTOL = 1e-9
MARGIN_TOL = 1e-9
PROJECT_TOL = 1e-10
PROJECT_MAX_ITER = 100_000


@dataclass(frozen=True)
class NashSet:
    anchor: np.ndarray
    basis: np.ndarray  # shape (n, d); columns orthonormal
    interior_margin: float

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def kernel_basis(P: np.ndarray, rtol: float = NULL_RTOL) -> np.ndarray:
    """Orthonormal basis of ker P; singular values below ``rtol * s_max`` count as zero."""
    n = P.shape[0]
    _, s, Vt = np.linalg.svd(P)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return np.eye(n)
    rank = int(np.sum(s > rtol * smax))
    return Vt[rank:].T.copy()


def sum_zero_basis(n: int) -> np.ndarray:
    """Orthonormal basis, shape (n, n-1), of the vectors summing to zero."""
    ones = np.ones((n, 1)) / np.sqrt(n)
    Q, _ = np.linalg.qr(np.concatenate([ones, np.eye(n)[:, : n - 1]], axis=1))
    return Q[:, 1:]


def restricted_singular_values(P: np.ndarray) -> np.ndarray:
    """Singular values of ``P`` restricted to the sum-zero subspace, descending."""
    B = sum_zero_basis(P.shape[0])
    return np.linalg.svd(P @ B, compute_uv=False)


def interior_ne(P) -> NashSet:
    """Most interior equilibrium and the directions spanning the equilibrium set.

    Solves ``max delta`` subject to ``P pi = 0``, ``sum(pi) = 1`` and
    ``pi >= delta`` with ``pi`` parametrised inside the numerical kernel of
    ``P``. Raises ``AssumptionViolatedError`` if no full-support equilibrium
    exists (``delta* <= 1e-9``).
    """
    P = check_preference_matrix(P, normalized=False)
    n = P.shape[0]
    Z = kernel_basis(P)
    k = Z.shape[1]
    u = Z.sum(axis=0)  # sum(Z w) = u . w
    if k == 0 or np.linalg.norm(u) < 1e-12:
        raise AssumptionViolatedError("kernel of P contains no probability vector")

    # variables (w_1..w_k, delta); maximise delta
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_ub = np.concatenate([-Z, np.ones((n, 1))], axis=1)
    b_ub = np.zeros(n)
    A_eq = np.concatenate([u, [0.0]])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(None, None)] * k + [(None, 1.0)], method="highs")
    if res.status != 0:
        raise AssumptionViolatedError(f"interior equilibrium program failed: {res.message}")
    w = res.x[:k]
    # polish onto the affine set {Z w : u.w = 1}
    w = w + (1.0 - u @ w) * u / (u @ u)
    anchor = Z @ w
    margin = float(anchor.min())
    if margin <= MARGIN_TOL:
        raise AssumptionViolatedError(f"no full-support equilibrium (margin {margin:.3g})")
    anchor = anchor / anchor.sum()

    # directions inside ker P that keep the sum fixed
    if k > 1:
        _, _, Wt = np.linalg.svd((u / np.linalg.norm(u))[None, :])
        basis = Z @ Wt[1:].T
    else:
        basis = np.zeros((n, 0))
    return NashSet(anchor=anchor, basis=basis, interior_margin=float(anchor.min()))


def duality_gap(P, pi) -> float:
    """``2 max_a (P pi)_a``; nonnegative, zero exactly at equilibria."""
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (P.shape[0],):
        raise InvalidDimensionError(f"policy length {pi.shape} does not match game size {P.shape[0]}")
    return float(2.0 * np.max(P @ pi))


def kl_project(P, ns: NashSet, pi, tol: float = PROJECT_TOL,
               max_iter: int = PROJECT_MAX_ITER) -> np.ndarray:
    """Equilibrium minimising ``D_KL(. || pi)``.

    At the optimum ``log x - log pi`` is orthogonal to every equilibrium
    direction, so ``x = pi * exp(W @ lam)`` with ``W`` spanning the orthogonal
    complement of ``ns.basis``. ``lam`` is found by damped Newton on the
    convex dual ``sum(x) - lam . W^T anchor``; this keeps full relative
    precision in tiny coordinates of ``x``. Stops once both the stationarity
    residual ``max |<r, log pi - log x>|`` and the affine-feasibility residual
    are at most ``tol``.
    """
    pi = require_positive(pi, "pi")
    if pi.shape != ns.anchor.shape:
        raise InvalidDimensionError("policy and equilibrium set have different sizes")
    N = ns.basis
    d = N.shape[1]
    if d == 0:
        return ns.anchor.copy()
    n = pi.shape[0]
    Q, _ = np.linalg.qr(N, mode="complete")
    W = Q[:, d:]
    target = W.T @ ns.anchor
    log_pi = np.log(pi)

    def dual(lam):
        with np.errstate(over="ignore"):
            x = np.exp(log_pi + W @ lam)
        return x, float(x.sum() - lam @ target)

    lam = np.zeros(n - d)
    x, f = dual(lam)
    residual = np.inf
    for _ in range(max_iter):
        g = W.T @ x - target
        stat = float(np.max(np.abs(N.T @ (np.log(x) - log_pi))))
        residual = max(float(np.max(np.abs(g))), stat)
        if residual <= tol:
            return x / x.sum()
        H = (W * x[:, None]).T @ W
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g
        slope = float(g @ step)
        gnorm = float(np.linalg.norm(g))
        t = 1.0
        while True:
            lam_new = lam - t * step
            x_new, f_new = dual(lam_new)
            if np.isfinite(f_new):
                if f_new <= f - 1e-4 * t * slope:
                    break
                # objective changes below round-off near the optimum; fall back to the residual
                if abs(f_new - f) <= 1e-13 * max(1.0, abs(f)) and \
                        np.linalg.norm(W.T @ x_new - target) < gnorm:
                    break
            t *= 0.5
            if t < 1e-16:
                raise ConvergenceError("KL projection line search stalled", residual)
        lam, x, f = lam_new, x_new, f_new
    raise ConvergenceError(f"KL projection did not converge in {max_iter} iterations", residual)


@dataclass(frozen=True)
class ConstantsReport:
    epsilon: float
    L: float
    lambda_min: float | None
    c_p_estimate: float | None
    samples_used: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _cp_samples(n: int, n_samples: int, seed: int) -> np.ndarray:
    # Dirichlet(1) bulk plus every tenth sample pinned near a vertex
    rng = make_rng(seed, 0xC0)
    X = rng.dirichlet(np.ones(n), size=n_samples)
    idx = np.arange(0, n_samples, 10)
    for j, i in enumerate(idx):
        a = j % n
        rest = rng.dirichlet(np.ones(n - 1)) * 1e-3
        X[i] = np.insert(rest, a, 1.0 - 1e-3)
    return X


def instance_constants(P, pi_star, n_samples: int = 10_000, seed: int = 0,
                       ns: NashSet | None = None) -> ConstantsReport:
    """Instance constants ``epsilon``, ``L``, ``lambda_min`` and a Monte-Carlo ``C_P``.

    ``c_p_estimate`` is the minimum of ``||P pi||_inf / ||pi - p(pi)||_1``
    over sampled non-equilibrium policies, so it upper-bounds the true
    infimum. ``lambda_min`` and ``c_p_estimate`` are ``None`` when ``P = 0``.
    """
    P = check_preference_matrix(P, normalized=False)
    pi_star = check_policy(pi_star, P.shape[0], strictly_positive=True, atol=1e-9, name="pi_star")
    n = P.shape[0]
    epsilon = float(pi_star.min())
    L = float(np.max(np.abs(P)))
    if L == 0.0:
        return ConstantsReport(epsilon, L, None, None, 0)
    s = restricted_singular_values(P)
    lambda_min = float(s[s > NULL_RTOL * s[0]].min())
    if ns is None:
        ns = interior_ne(P)
    best = np.inf
    used = 0
    for pi in _cp_samples(n, int(n_samples), seed):
        pi = np.clip(pi, 1e-300, None)
        pi = pi / pi.sum()
        proj = kl_project(P, ns, pi)
        dist = float(np.abs(pi - proj).sum())
        if dist < 1e-12:
            continue
        used += 1
        best = min(best, float(np.max(np.abs(P @ pi))) / dist)
    c_p = float(best) if used else None
    return ConstantsReport(epsilon, L, lambda_min, c_p, used)
