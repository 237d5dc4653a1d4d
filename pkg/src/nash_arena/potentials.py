"""Potential functions and phase structure of OMWU trajectories.

Index convention: ``pi_hat_t`` is the main policy at step ``t``, ``pi_prev``
the extrapolated policy one half-step earlier and ``pi_t`` the extrapolated
policy computed from ``pi_hat_t``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from ._math import kl_divergence, require_positive

KL_NOISE_FLOOR = 1e-12
CLIP_FLOOR = 1e-300


@dataclass(frozen=True)
class PotentialRecord:
    theta_pot: float
    phi_pot: float
    k_t: float
    k_hat_t1: float
    m_t: float
    m_hat_t1: float


@dataclass(frozen=True)
class PhaseReport:
    burn_in_step: int | None
    linear_rate: float
    fit_r2: float
    clipped: bool = False
    window: tuple = ()

    def to_dict(self) -> dict:
        return asdict(self)


def theta_potential(pi_star, pi_hat_t, pi_prev, eta: float, L: float) -> float:
    """``D_KL(pi* || pi_hat_t) + 4 eta^2 L^2 D_KL(pi_hat_t || pi_prev)``."""
    pi_star = require_positive(pi_star, "pi_star")
    pi_hat_t = require_positive(pi_hat_t, "pi_hat_t")
    pi_prev = require_positive(pi_prev, "pi_prev")
    first = kl_divergence(pi_star, pi_hat_t)
    if eta == 0 or L == 0:
        return first
    return first + 4.0 * eta**2 * L**2 * kl_divergence(pi_hat_t, pi_prev)


def phi_potential(pi_star, pi_hat_t, eta: float, P, theta_t: float) -> float:
    pi_star = require_positive(pi_star, "pi_star")
    pi_hat_t = require_positive(pi_hat_t, "pi_hat_t")
    P = np.asarray(P, dtype=float)
    num = float((np.log(pi_hat_t) - np.log(pi_star)) @ (eta * (P @ pi_hat_t)))
    return num / (theta_t + 2.0 / math.e) ** 2


def step_scales(pi_hat_t, pi_prev, pi_t, eta: float, P) -> tuple[float, float, float, float]:
    """``(K^(t), K_hat^(t+1), M^(t), M_hat^(t+1))`` for one OMWU step."""
    pi_hat_t = np.asarray(pi_hat_t, dtype=float)
    P = np.asarray(P, dtype=float)
    g_prev = eta * (P @ np.asarray(pi_prev, dtype=float))
    g_t = eta * (P @ np.asarray(pi_t, dtype=float))
    k = float(np.max(pi_hat_t * np.abs(g_prev)))
    k_hat = float(np.max(pi_hat_t * np.abs(g_t)))
    m = float(logsumexp(g_prev, b=pi_hat_t))
    m_hat = float(logsumexp(g_t, b=pi_hat_t))
    return k, k_hat, m, m_hat


def _theta_values(trace_or_values) -> np.ndarray:
    if hasattr(trace_or_values, "records"):
        vals = [r.theta_pot for r in trace_or_values.records]
    else:
        vals = list(trace_or_values)
    if any(v is None for v in vals):
        raise ValueError("trace has no potential diagnostics; run with diagnostics on")
    return np.asarray(vals, dtype=float)


def detect_burn_in(trace, eps: float) -> int | None:
    """0-based index of the first record with ``Theta < eps``."""
    theta = _theta_values(trace)
    hits = np.flatnonzero(theta < eps)
    return int(hits[0]) if hits.size else None


def linear_fit(t, y) -> tuple[float, float, float]:
    """Least squares ``y ~ a + b t``; returns ``(slope, intercept, r2)``; r2 is 0 for constant y."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 3:
        raise ValueError(f"need at least 3 points for a rate fit, got {t.size}")
    tc = t - t.mean()
    yc = y - y.mean()
    sxx = float(tc @ tc)
    if sxx == 0.0:
        raise ValueError("rate fit needs distinct steps")
    slope = float(tc @ yc) / sxx
    intercept = float(y.mean() - slope * t.mean())
    syy = float(yc @ yc)
    if syy == 0.0:
        return slope, intercept, 0.0
    resid = yc - slope * tc
    r2 = 1.0 - float(resid @ resid) / syy
    return slope, intercept, min(1.0, max(0.0, r2))


def fit_linear_rate(trace, window=None, eps: float | None = None,
                    noise_floor: float = KL_NOISE_FLOOR) -> PhaseReport:
    """Fit ``log D_KL(pi* || pi_hat_t)`` linearly in ``t``.

    ``window`` is a ``(start, stop)`` pair of 0-based record indices. By
    default burn-in is detected with ``eps = min(pi*)``, records whose KL has
    dropped to the floating-point noise floor are discarded, and the last half
    of the remaining post-burn-in records is used. ``burn_in_step`` in the
    report is the 1-based step number of the first post-burn-in record.
    """
    recs = trace.records
    if any(r.kl_to_star is None for r in recs):
        raise ValueError("trace has no KL diagnostics; run with diagnostics on")
    steps = np.array([r.step for r in recs], dtype=float)
    kl = np.array([r.kl_to_star for r in recs], dtype=float)
    burn = None
    if eps is None and getattr(trace, "pi_star", None) is not None:
        eps = float(np.min(trace.pi_star))
    if eps is not None and recs and recs[0].theta_pot is not None:
        burn = detect_burn_in(trace, eps)
    if window is None:
        start = burn if burn is not None else 0
        above = np.flatnonzero(kl[start:] > noise_floor)
        stop = start + int(above[-1]) + 1 if above.size else start
        start = start + (stop - start) // 2
    else:
        start, stop = int(window[0]), int(window[1])
        if not 0 <= start <= stop <= len(recs):
            raise ValueError(f"window {window} outside trace of length {len(recs)}")
    seg = kl[start:stop]
    clipped = bool(np.any(seg <= 0))
    slope, _, r2 = linear_fit(steps[start:stop], np.log(np.clip(seg, CLIP_FLOOR, None)))
    burn_step = int(recs[burn].step) if burn is not None else None
    return PhaseReport(burn_step, slope, r2, clipped, (start, stop))


def step_inequality_margins(pi_hat_t, pi_prev, pi_t, pi_hat_next, P, eta: float, pi_star) -> dict:
    """Slack ``bound - value`` of each one-step OMWU inequality; all should be >= 0.

    Keys: ``theta_decrease`` (Theta drop vs the KL terms), ``theta_vs_k``
    (Theta drop vs ``max(K_hat^(t+1), K^(t+1))^2``), ``log_step`` (sup-norm
    change of ``log pi_hat``), ``m_hat``/``m`` (normalizers vs ``K``),
    ``m_hat_abs``/``m_abs`` (normalizers vs ``eta L``), ``main_move`` and
    ``ext_move`` (l1 moves vs ``K``).
    """
    P = np.asarray(P, dtype=float)
    L = float(np.max(np.abs(P)))
    n = P.shape[0]
    c = eta * L
    theta_t = theta_potential(pi_star, pi_hat_t, pi_prev, eta, L)
    theta_next = theta_potential(pi_star, pi_hat_next, pi_t, eta, L)
    drop = theta_t - theta_next
    k, k_hat, m, m_hat = step_scales(pi_hat_t, pi_prev, pi_t, eta, P)
    k_next = float(np.max(np.asarray(pi_hat_next) * np.abs(eta * (P @ pi_t))))
    shrink = 1.0 - 4.0 * c**2
    c1 = shrink / (math.sqrt(2.0) * c + 2.0 * math.exp(2.0 * c)) ** 2
    kl_terms = kl_divergence(pi_t, pi_hat_t) + kl_divergence(pi_hat_next, pi_t)
    out = {
        "theta_decrease": drop - shrink * kl_terms,
        "theta_vs_k": drop - c1 * max(k_hat, k_next) ** 2,
        "log_step": 2.0 * c - float(np.max(np.abs(np.log(pi_hat_next) - np.log(pi_hat_t)))),
        "m_hat": math.exp(c) * n * k_hat - abs(m_hat),
        "m": math.exp(c) * n * k - abs(m),
        "m_hat_abs": c - abs(m_hat),
        "m_abs": c - abs(m),
    }
    if c > 0:
        scale = (math.exp(2.0 * c) - 1.0) * (math.exp(c) + 1.0) * n / (2.0 * c)
        out["main_move"] = scale * k_hat - float(np.abs(np.asarray(pi_hat_next) - pi_hat_t).sum())
        out["ext_move"] = scale * k - float(np.abs(np.asarray(pi_t) - pi_hat_t).sum())
    return out
