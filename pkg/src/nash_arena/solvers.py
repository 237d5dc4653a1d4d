"""Exact tabular solvers for skew-symmetric preference games.

All solvers work on logits kept in the sum-zero gauge. OMWU keeps two
sequences: ``main`` (the integer-step policies) and ``extrapolated`` (the
half-step policies). In probability space one OMWU step is

    pi_ext'  ~ pi_main * exp(eta * P @ pi_ext)
    pi_main' ~ pi_main * exp(eta * P @ pi_ext')

Single-sequence baselines keep ``extrapolated == main``.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from ._math import gauge, kl_divergence, log_softmax, softmax
from .equilibrium import duality_gap, interior_ne, kl_project
from .exceptions import AssumptionViolatedError, InnerSolveError, InvalidDimensionError
from .game import GameInstance
from .potentials import phi_potential, theta_potential
from .validation import check_policy, check_preference_matrix

logger = logging.getLogger(__name__)

ALGORITHMS = ("OMWU", "OMD", "OMD_REG", "EGPO", "SPPO", "MPO", "ONPO")

# tabular column of the published hyperparameter table; beta = 0.001 wherever regularized
DEFAULT_HPARAMS = {
    "OMWU": {"eta": 9.0},
    "OMD": {"eta": 0.4},
    "OMD_REG": {"eta": 0.001, "beta": 0.001},
    "EGPO": {"eta": 0.01, "beta": 0.001},
    "SPPO": {"eta": 0.1, "inner_lr": 0.03},
    "MPO": {"inner_lr": 0.0003, "beta": 0.001},
    "ONPO": {"eta": 0.01, "inner_lr": 0.01},
}

MPO_ETA_FLOOR = 5e-4


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str = "OMWU"
    eta: float = 0.1
    beta: float = 0.0
    inner_lr: float = 0.01
    inner_max_steps: int = 10
    inner_tol: float = 1e-5
    total_steps: int = 1000
    ref_refresh_period: int = 1000
    seed: int = 0
    theory_mode: bool = False

    @classmethod
    def default(cls, algorithm: str, **overrides) -> "SolverConfig":
        """Config with the tabular defaults for ``algorithm`` and any overrides applied."""
        algorithm = algorithm.upper()
        if algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
        params = {**DEFAULT_HPARAMS[algorithm], **overrides}
        return cls(algorithm=algorithm, **params)

    def validate(self, L: float | None = None) -> "SolverConfig":
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.algorithm in ("OMD_REG", "EGPO") and not self.beta > 0:
            raise ValueError(f"{self.algorithm} needs beta > 0")
        if self.total_steps < 0:
            raise ValueError("total_steps must be nonnegative")
        if self.inner_max_steps < 1 or self.inner_lr <= 0:
            raise ValueError("inner solver needs inner_max_steps >= 1 and inner_lr > 0")
        if self.ref_refresh_period < 1:
            raise ValueError("ref_refresh_period must be positive")
        if self.theory_mode and self.algorithm == "OMWU" and L is not None and self.eta * L >= 0.5:
            raise ValueError(f"theory mode needs eta * L < 1/2, got {self.eta * L:.4g}")
        return self


@dataclass(frozen=True)
class SolverState:
    main: np.ndarray
    extrapolated: np.ndarray
    prev_extrapolated_policy: np.ndarray
    reference: np.ndarray
    step: int = 0

    @classmethod
    def initial(cls, n: int, init_policy=None) -> "SolverState":
        """Zero logits (uniform) unless ``init_policy`` is given; the reference stays uniform."""
        if init_policy is None:
            theta = np.zeros(n)
        else:
            pi = check_policy(init_policy, n, strictly_positive=True, atol=1e-9, name="init_policy")
            theta = gauge(np.log(pi))
        return cls(theta, theta.copy(), softmax(theta), np.zeros(n), 0)

    @property
    def policy(self) -> np.ndarray:
        return softmax(self.main)

    @property
    def extrapolated_policy(self) -> np.ndarray:
        return softmax(self.extrapolated)


def _check_dims(state: SolverState, P: np.ndarray) -> None:
    if state.main.shape != (P.shape[0],):
        raise InvalidDimensionError(
            f"state has {state.main.shape[0]} actions, game has {P.shape[0]}"
        )


def omwu_step(state: SolverState, P, cfg: SolverConfig) -> SolverState:
    P = np.asarray(P, dtype=float)
    _check_dims(state, P)
    eta = cfg.eta
    ext = gauge(state.main + eta * (P @ state.prev_extrapolated_policy))
    ext_policy = softmax(ext)
    main = gauge(state.main + eta * (P @ ext_policy))
    return replace(state, main=main, extrapolated=ext,
                   prev_extrapolated_policy=ext_policy, step=state.step + 1)


def omd_step(state: SolverState, P, cfg: SolverConfig) -> SolverState:
    """Plain OMD for ``beta == 0``, otherwise the closed-form regularized map."""
    P = np.asarray(P, dtype=float)
    _check_dims(state, P)
    eta, beta = cfg.eta, cfg.beta
    g = P @ softmax(state.main)
    if beta > 0:
        main = state.main - eta * beta * (state.main - state.reference - g / beta)
    else:
        main = state.main + eta * g
    main = gauge(main)
    pol = softmax(main)
    return replace(state, main=main, extrapolated=main.copy(),
                   prev_extrapolated_policy=pol, step=state.step + 1)


def egpo_step(state: SolverState, P, cfg: SolverConfig) -> SolverState:
    P = np.asarray(P, dtype=float)
    _check_dims(state, P)
    eta, beta = cfg.eta, cfg.beta
    if not beta > 0:
        raise ValueError("EGPO needs beta > 0")
    base = (1.0 - eta * beta) * state.main + eta * beta * state.reference
    half = gauge(base + eta * (P @ softmax(state.main)))
    half_policy = softmax(half)
    main = gauge(base + eta * (P @ half_policy))
    return replace(state, main=main, extrapolated=half,
                   prev_extrapolated_policy=half_policy, step=state.step + 1)


def nested_inner_solve(objective: Callable[[np.ndarray], float],
                       gradient: Callable[[np.ndarray], np.ndarray],
                       start: np.ndarray, cfg: SolverConfig, lr: float | None = None,
                       gauged: bool = True) -> tuple[np.ndarray, list[float]]:
    """Plain gradient descent with the inner stopping rule.

    Runs at most ``cfg.inner_max_steps`` steps of size ``lr`` (default
    ``cfg.inner_lr``) and stops early once successive objective values differ by
    at most ``cfg.inner_tol``. Returns the final point (gauged unless
    ``gauged=False``, as for network weights) and the objective at every iterate.
    """
    lr = cfg.inner_lr if lr is None else lr
    theta = np.asarray(start, dtype=float).copy()
    f = float(objective(theta))
    if not np.isfinite(f):
        raise InnerSolveError(f"non-finite inner objective at start: {f}")
    values = [f]
    for _ in range(cfg.inner_max_steps):
        theta = theta - lr * np.asarray(gradient(theta), dtype=float)
        f_new = float(objective(theta))
        if not np.isfinite(f_new) or not np.all(np.isfinite(theta)):
            raise InnerSolveError(f"non-finite inner objective after {len(values)} steps: {f_new}")
        values.append(f_new)
        if abs(f_new - f) <= cfg.inner_tol:
            break
        f = f_new
    return (gauge(theta) if gauged else theta), values


def _softmax_chain(pi: np.ndarray, v: np.ndarray) -> np.ndarray:
    # d/dtheta of F(softmax(theta)) given dF/dpi = v
    return pi * (v - pi @ v)


def sppo_objective(pi_t: np.ndarray, target: np.ndarray):
    """Objective and gradient of ``E_{y~pi_t}(log pi(y)/pi_t(y) - target_y)^2``."""
    log_pi_t = np.log(pi_t)

    def objective(theta):
        d = log_softmax(theta) - log_pi_t - target
        return float(pi_t @ d**2)

    def gradient(theta):
        pi = softmax(theta)
        wd = pi_t * (log_softmax(theta) - log_pi_t - target)
        return 2.0 * (wd - pi * wd.sum())

    return objective, gradient


def sppo_step(state: SolverState, P, cfg: SolverConfig, history: list | None = None) -> SolverState:
    P = np.asarray(P, dtype=float)
    _check_dims(state, P)
    pi_t = softmax(state.main)
    # P(y > pi_t) - 1/2 == (P pi_t)_y
    objective, gradient = sppo_objective(pi_t, cfg.eta * (P @ pi_t))
    main, values = nested_inner_solve(objective, gradient, state.main, cfg)
    if history is not None:
        history.append(values)
    return replace(state, main=main, extrapolated=main.copy(),
                   prev_extrapolated_policy=softmax(main), step=state.step + 1)


def mpo_eta(t: int, T: int) -> float:
    """Annealed outer step ``max(1 - t/T, 5e-4)``; ``t`` counts outer steps from 0."""
    if T <= 0:
        return 1.0
    return max(1.0 - t / T, MPO_ETA_FLOOR)


def mpo_objective(pi_t: np.ndarray, pi_ref: np.ndarray, P: np.ndarray, beta: float, eta_t: float):
    """Negated MPO proximal objective (to be minimised) and its gradient."""
    win = P @ pi_ref
    log_ref, log_t = np.log(pi_ref), np.log(pi_t)

    def objective(theta):
        pi, lp = softmax(theta), log_softmax(theta)
        value = pi @ win + 0.5 - beta * (pi @ (lp - log_ref)) - (pi @ (lp - log_t)) / eta_t
        return float(-value)

    def gradient(theta):
        pi, lp = softmax(theta), log_softmax(theta)
        v = win - beta * (lp - log_ref) - (lp - log_t) / eta_t
        return -_softmax_chain(pi, v)

    return objective, gradient


def mpo_step(state: SolverState, P, cfg: SolverConfig, t: int | None = None,
             T: int | None = None, history: list | None = None) -> SolverState:
    P = np.asarray(P, dtype=float)
    _check_dims(state, P)
    t = state.step if t is None else t
    T = cfg.total_steps if T is None else T
    reference = state.reference
    if t > 0 and t % cfg.ref_refresh_period == 0:
        # every tau steps the reference becomes the current iterate
        reference = state.main.copy()
    objective, gradient = mpo_objective(softmax(state.main), softmax(reference),
                                        P, cfg.beta, mpo_eta(t, T))
    main, values = nested_inner_solve(objective, gradient, state.main, cfg)
    if history is not None:
        history.append(values)
    return replace(state, main=main, extrapolated=main.copy(),
                   prev_extrapolated_policy=softmax(main), reference=reference,
                   step=state.step + 1)


def proximal_objective(anchor_theta: np.ndarray, g: np.ndarray, eta: float):
    """``-eta <pi, g> + D_KL(pi || softmax(anchor_theta))`` and its gradient."""
    log_anchor = log_softmax(anchor_theta)

    def objective(theta):
        pi, lp = softmax(theta), log_softmax(theta)
        return float(-eta * (pi @ g) + pi @ (lp - log_anchor))

    def gradient(theta):
        pi, lp = softmax(theta), log_softmax(theta)
        return _softmax_chain(pi, -eta * g + (lp - log_anchor))

    return objective, gradient


def onpo_step(state: SolverState, P, cfg: SolverConfig, history: list | None = None) -> SolverState:
    P = np.asarray(P, dtype=float)
    _check_dims(state, P)
    obj, grad = proximal_objective(state.main, P @ state.prev_extrapolated_policy, cfg.eta)
    ext, v1 = nested_inner_solve(obj, grad, state.main, cfg)
    ext_policy = softmax(ext)
    obj, grad = proximal_objective(state.main, P @ ext_policy, cfg.eta)
    main, v2 = nested_inner_solve(obj, grad, state.main, cfg)
    if history is not None:
        history.extend([v1, v2])
    return replace(state, main=main, extrapolated=ext,
                   prev_extrapolated_policy=ext_policy, step=state.step + 1)


def solver_step(state: SolverState, P, cfg: SolverConfig) -> SolverState:
    algo = cfg.algorithm
    if algo == "OMWU":
        return omwu_step(state, P, cfg)
    if algo == "OMD":
        return omd_step(state, P, replace(cfg, beta=0.0) if cfg.beta else cfg)
    if algo == "OMD_REG":
        return omd_step(state, P, cfg)
    if algo == "EGPO":
        return egpo_step(state, P, cfg)
    if algo == "SPPO":
        return sppo_step(state, P, cfg)
    if algo == "MPO":
        return mpo_step(state, P, cfg)
    if algo == "ONPO":
        return onpo_step(state, P, cfg)
    raise ValueError(f"unknown algorithm {algo!r}")


TRACE_FIELDS = ("step", "gap_last", "gap_avg", "kl_to_star", "theta_pot", "phi_pot", "k_hat", "wall_ns")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    gap_last: float
    gap_avg: float
    kl_to_star: float | None = None
    theta_pot: float | None = None
    phi_pot: float | None = None
    k_hat: float | None = None
    wall_ns: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trace:
    """Per-step diagnostics of one solver run plus its end state."""

    config: SolverConfig
    records: list = field(default_factory=list)
    final_state: SolverState | None = None
    average_policy: np.ndarray | None = None
    pi_star: np.ndarray | None = None
    initial_theta_pot: float | None = None
    diagnostics_error: str | None = None

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.records)

    def write_jsonl(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @staticmethod
    def read_jsonl(path) -> list[TraceRecord]:
        out = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                out.append(TraceRecord(**json.loads(line)))
        return out


def run_solver(instance, cfg: SolverConfig, diagnostics: bool = False, init_policy=None,
               timing: bool = True) -> Trace:
    """Run ``cfg.total_steps`` steps from uniform (or ``init_policy``) and record a trace.

    With ``diagnostics`` the convergence target ``pi* = p(initial policy)`` is
    computed once, and each record carries ``D_KL(pi* || main)``, the potentials
    and ``K_hat``. Games without a full-support equilibrium fall back to
    gap-only records.
    """
    P = instance.matrix if isinstance(instance, GameInstance) else instance
    P = check_preference_matrix(P, normalized=False)
    n = P.shape[0]
    L = float(np.max(np.abs(P)))
    cfg.validate(L)
    state = SolverState.initial(n, init_policy)
    trace = Trace(config=cfg)

    pi_star = None
    if diagnostics:
        try:
            ns = interior_ne(P)
            pi_star = kl_project(P, ns, state.policy)
        except AssumptionViolatedError as exc:
            trace.diagnostics_error = str(exc)
            logger.warning("diagnostics disabled: %s", exc)
    trace.pi_star = pi_star
    eta = cfg.eta
    if pi_star is not None:
        trace.initial_theta_pot = theta_potential(pi_star, state.policy, state.policy, eta, L)

    avg_sum = np.zeros(n)
    records = trace.records
    for k in range(cfg.total_steps):
        t0 = time.perf_counter_ns() if timing else 0
        pi_old = state.policy
        state = solver_step(state, P, cfg)
        pi = state.policy
        avg_sum += pi
        avg = avg_sum / (k + 1)
        kl = theta = phi = k_hat = None
        if pi_star is not None:
            pi_ext = softmax(state.extrapolated)
            kl = kl_divergence(pi_star, pi)
            theta = kl + 4.0 * eta**2 * L**2 * kl_divergence(pi, pi_ext)
            phi = phi_potential(pi_star, pi, eta, P, theta)
            k_hat = float(np.max(pi_old * np.abs(eta * (P @ pi_ext))))
        wall = time.perf_counter_ns() - t0 if timing else 0
        records.append(TraceRecord(k + 1, duality_gap(P, pi), duality_gap(P, avg),
                                   kl, theta, phi, k_hat, wall))
    trace.final_state = state
    trace.average_policy = avg_sum / cfg.total_steps if cfg.total_steps else state.policy
    return trace
