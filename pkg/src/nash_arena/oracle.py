"""Slow independent references for the fast numerical paths.

Nothing here shares code with the solvers or the projection: the grid
projection searches the equilibrium polytope directly, vertices come from
support enumeration, and single solver steps are recomputed with mpmath at 50
significant digits.
"""
from __future__ import annotations

import itertools

import mpmath
import numpy as np
from scipy.linalg import null_space

from .exceptions import InvalidDimensionError
from .solvers import MPO_ETA_FLOOR, SolverConfig, SolverState

DIGITS = 50


def lp_equilibrium_vertices(P, tol: float = 1e-10) -> list:
    """Vertices of ``{pi in simplex : P pi = 0}`` by support enumeration (n <= 6)."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if n > 6:
        raise InvalidDimensionError(f"support enumeration is limited to n <= 6, got {n}")
    A = np.vstack([P, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    found = []
    for k in range(1, n + 1):
        for S in itertools.combinations(range(n), k):
            cols = A[:, S]
            if np.linalg.matrix_rank(cols, tol=1e-9) < k:
                continue
            x, *_ = np.linalg.lstsq(cols, b, rcond=None)
            if np.max(np.abs(cols @ x - b)) > tol or np.any(x <= tol):
                continue
            v = np.zeros(n)
            v[list(S)] = x
            if not any(np.max(np.abs(v - w)) < 1e-9 for w in found):
                found.append(v)
    return found


def in_convex_hull(point, vertices, tol: float = 1e-8) -> bool:
    """Is ``point`` within ``tol`` of the convex hull of ``vertices``? (least-squares weights check)"""
    from scipy.optimize import nnls

    V = np.asarray(vertices, dtype=float).T
    A = np.vstack([V, np.ones((1, V.shape[1])) * 1e3])
    b = np.concatenate([np.asarray(point, dtype=float), [1e3]])
    w, _ = nnls(A, b)
    return float(np.max(np.abs(V @ w - point))) <= tol and abs(w.sum() - 1.0) <= tol


def _kl(x, pi):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(x > 0, x * (np.log(np.where(x > 0, x, 1.0)) - np.log(pi)), 0.0)
    return terms.sum(axis=-1)


def grid_kl_project(P, pi, resolution: float = 1e-3, levels: int = 12, points: int = 41) -> np.ndarray:
    """Minimise ``D_KL(x || pi)`` over the equilibrium polytope by a refining grid (n <= 4).

    The polytope is written as ``centroid + N c`` with ``N`` an orthonormal
    basis of the sum-zero kernel of ``P``. A grid over the bounding box of the
    vertices is searched, then repeatedly re-centred on the best point with a
    box shrunk to a few cells, until the spacing is below ``resolution / 100``.
    """
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    n = P.shape[0]
    if n > 4:
        raise InvalidDimensionError(f"grid projection is limited to n <= 4, got {n}")
    verts = lp_equilibrium_vertices(P)
    if not verts:
        raise ValueError("game has no equilibrium in the simplex")
    centre = np.mean(verts, axis=0)
    K = null_space(np.vstack([P, np.ones((1, n))]), rcond=1e-9)
    d = K.shape[1]
    if d == 0:
        return centre
    coords = np.array([K.T @ (v - centre) for v in verts])
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    best_c = np.zeros(d)
    best_f = float(_kl(centre, pi))
    for _ in range(levels):
        axes = [np.linspace(lo[j], hi[j], points) for j in range(d)]
        C = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        X = centre + C @ K.T
        ok = np.all(X >= -1e-15, axis=1)
        X, C = np.clip(X[ok], 0.0, None), C[ok]
        if len(X):
            f = _kl(X, pi)
            i = int(np.argmin(f))
            if f[i] < best_f:
                best_f, best_c = float(f[i]), C[i]
        h = (hi - lo) / (points - 1)
        if np.max(h) < resolution / 100:
            break
        lo, hi = best_c - 3 * h, best_c + 3 * h
    x = np.clip(centre + K @ best_c, 0.0, None)
    return x / x.sum()


# ---------------------------------------------------------------- high precision


def _mp_vec(x):
    return [mpmath.mpf(float(v)) for v in np.asarray(x, dtype=float)]


def _matvec(P, x):
    return [mpmath.fsum(P[i][j] * x[j] for j in range(len(x))) for i in range(len(P))]


def _gauge(x):
    mean = mpmath.fsum(x) / len(x)
    return [v - mean for v in x]


def _softmax(x):
    top = max(x)
    e = [mpmath.exp(v - top) for v in x]
    s = mpmath.fsum(e)
    return [v / s for v in e]


def _log_softmax(x):
    top = max(x)
    lse = top + mpmath.log(mpmath.fsum(mpmath.exp(v - top) for v in x))
    return [v - lse for v in x]


def _axpy(a, x, y):
    return [a * xi + yi for xi, yi in zip(x, y)]


def _dot(x, y):
    return mpmath.fsum(a * b for a, b in zip(x, y))


def _chain(pi, v):
    # gradient w.r.t. logits of F(softmax) given dF/dpi = v
    m = _dot(pi, v)
    return [p * (vi - m) for p, vi in zip(pi, v)]


def _inner_gd(f, grad, start, cfg: SolverConfig):
    theta = list(start)
    fv = f(theta)
    for _ in range(cfg.inner_max_steps):
        g = grad(theta)
        theta = [t - mpmath.mpf(cfg.inner_lr) * gi for t, gi in zip(theta, g)]
        fn = f(theta)
        if abs(fn - fv) <= cfg.inner_tol:
            break
        fv = fn
    return _gauge(theta)


def _sppo(theta, P, eta):
    pi_t = _softmax(theta)
    log_t = [mpmath.log(p) for p in pi_t]
    tgt = [eta * v for v in _matvec(P, pi_t)]

    def res(z):
        return [a - b - c for a, b, c in zip(_log_softmax(z), log_t, tgt)]

    def f(z):
        return _dot(pi_t, [r * r for r in res(z)])

    def grad(z):
        # d/dz_a of sum_y w_y (log softmax z)_y^2-type terms: 2 (w r)_a - 2 pi_a sum(w r)
        w = [p * r for p, r in zip(pi_t, res(z))]
        tot = mpmath.fsum(w)
        return [2 * (wa - pa * tot) for wa, pa in zip(w, _softmax(z))]

    return f, grad


def _mpo(theta, ref, P, beta, eta_t):
    pi_t, pi_ref = _softmax(theta), _softmax(ref)
    win = _matvec(P, pi_ref)
    log_t = [mpmath.log(p) for p in pi_t]
    log_r = [mpmath.log(p) for p in pi_ref]

    def f(z):
        pi, lp = _softmax(z), _log_softmax(z)
        val = _dot(pi, win) + mpmath.mpf(1) / 2
        val -= beta * _dot(pi, [a - b for a, b in zip(lp, log_r)])
        val -= _dot(pi, [a - b for a, b in zip(lp, log_t)]) / eta_t
        return -val

    def grad(z):
        pi, lp = _softmax(z), _log_softmax(z)
        v = [w - beta * (a - r) - (a - t) / eta_t for w, a, r, t in zip(win, lp, log_r, log_t)]
        return [-g for g in _chain(pi, v)]

    return f, grad


def _prox(anchor, g, eta):
    log_a = _log_softmax(anchor)

    def f(z):
        pi, lp = _softmax(z), _log_softmax(z)
        return -eta * _dot(pi, g) + _dot(pi, [a - b for a, b in zip(lp, log_a)])

    def grad(z):
        pi, lp = _softmax(z), _log_softmax(z)
        return _chain(pi, [-eta * gi + a - b for gi, a, b in zip(g, lp, log_a)])

    return f, grad


def highprec_step(algorithm: str, state: SolverState, P, cfg: SolverConfig) -> dict:
    """One solver step at 50 digits.

    Returns a dict with the new ``main``/``extrapolated`` logits and policies
    as lists of ``mpmath.mpf``, plus ``reference`` logits.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if n > 10:
        raise InvalidDimensionError(f"high-precision oracle is limited to n <= 10, got {n}")
    algorithm = algorithm.upper()
    with mpmath.workdps(DIGITS):
        Pm = [_mp_vec(row) for row in P]
        theta = _mp_vec(state.main)
        ref = _mp_vec(state.reference)
        prev = _mp_vec(state.prev_extrapolated_policy)
        eta, beta = mpmath.mpf(cfg.eta), mpmath.mpf(cfg.beta)
        ext = None
        if algorithm == "OMWU":
            ext = _gauge(_axpy(eta, _matvec(Pm, prev), theta))
            main = _gauge(_axpy(eta, _matvec(Pm, _softmax(ext)), theta))
        elif algorithm in ("OMD", "OMD_REG"):
            g = _matvec(Pm, _softmax(theta))
            if algorithm == "OMD_REG" and beta > 0:
                main = [t - eta * beta * (t - r - gi / beta) for t, r, gi in zip(theta, ref, g)]
            else:
                main = _axpy(eta, g, theta)
            main = _gauge(main)
        elif algorithm == "EGPO":
            base = [(1 - eta * beta) * t + eta * beta * r for t, r in zip(theta, ref)]
            ext = _gauge(_axpy(eta, _matvec(Pm, _softmax(theta)), base))
            main = _gauge(_axpy(eta, _matvec(Pm, _softmax(ext)), base))
        elif algorithm == "SPPO":
            main = _inner_gd(*_sppo(theta, Pm, eta), theta, cfg)
        elif algorithm == "MPO":
            t, T = state.step, cfg.total_steps
            eta_t = max(1 - mpmath.mpf(t) / T, mpmath.mpf(MPO_ETA_FLOOR)) if T > 0 else mpmath.mpf(1)
            if t > 0 and t % cfg.ref_refresh_period == 0:
                ref = list(theta)
            main = _inner_gd(*_mpo(theta, ref, Pm, beta, eta_t), theta, cfg)
        elif algorithm == "ONPO":
            ext = _inner_gd(*_prox(theta, _matvec(Pm, prev), eta), theta, cfg)
            main = _inner_gd(*_prox(theta, _matvec(Pm, _softmax(ext)), eta), theta, cfg)
        else:
            raise ValueError(f"unsupported algorithm {algorithm!r}")
        ext = list(main) if ext is None else ext
        return {
            "main": main,
            "extrapolated": ext,
            "policy": _softmax(main),
            "extrapolated_policy": _softmax(ext),
            "reference": ref,
        }


def to_float(values) -> np.ndarray:
    return np.array([float(v) for v in values])


def highprec_sample(n: int, m: int, seed: int) -> list:
    """Rebuild a sampled game from the same random draws with Gram-Schmidt at 50 digits."""
    from ._rng import make_rng

    rng = make_rng(seed, n, m)
    V = 1.0 - rng.random((m, n))
    A = rng.standard_normal((n - m, n - m))
    with mpmath.workdps(DIGITS):
        cols = [_mp_vec(v) for v in V] + [[mpmath.mpf(int(i == j)) for i in range(n)] for j in range(n - m)]
        basis = []
        for c in cols:
            w = list(c)
            for q in basis:
                proj = _dot(q, w)
                w = [wi - proj * qi for wi, qi in zip(w, q)]
            # second pass for stability
            for q in basis:
                proj = _dot(q, w)
                w = [wi - proj * qi for wi, qi in zip(w, q)]
            norm = mpmath.sqrt(_dot(w, w))
            basis.append([wi / norm for wi in w])
        M = basis[m:]  # columns of the complement
        S = [[mpmath.mpf(float(A[i, j] - A[j, i])) for j in range(n - m)] for i in range(n - m)]
        Pm = [[mpmath.fsum(M[a][i] * S[a][b] * M[b][j] for a in range(n - m) for b in range(n - m))
               for j in range(n)] for i in range(n)]
        scale = max(abs(v) for row in Pm for v in row)
        if scale < mpmath.mpf(10) ** -30:
            return [[0.0] * n for _ in range(n)]
        return [[float(v / scale / 2) for v in row] for row in Pm]
