"""scikit-learn style wrappers around the solvers and the equilibrium geometry."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .equilibrium import duality_gap, interior_ne, kl_project
from .neural import MlpPolicy, NeuralConfig, run_neural
from .solvers import DEFAULT_HPARAMS, SolverConfig, run_solver
from .validation import check_preference_matrix


def _check_game(P):
    P = check_array(P, dtype=float, ensure_min_samples=2, ensure_min_features=2)
    return check_preference_matrix(P, normalized=False)


class NashSolver(BaseEstimator):
    """Run a tabular solver on a preference matrix.

    ``fit(P)`` sets ``policy_`` (last iterate), ``average_policy_``, ``trace_``,
    ``n_iter_`` and ``duality_gap_``. ``eta``, ``beta`` and ``inner_lr`` left as
    ``None`` take the algorithm's defaults.
    """

    def __init__(self, algorithm="OMWU", eta=None, beta=None, inner_lr=None, n_steps=1000,
                 init_policy=None, diagnostics=False, theory_mode=False):
        self.algorithm = algorithm
        self.eta = eta
        self.beta = beta
        self.inner_lr = inner_lr
        self.n_steps = n_steps
        self.init_policy = init_policy
        self.diagnostics = diagnostics
        self.theory_mode = theory_mode

    def _config(self) -> SolverConfig:
        overrides = {k: v for k, v in (("eta", self.eta), ("beta", self.beta),
                                       ("inner_lr", self.inner_lr)) if v is not None}
        algo = str(self.algorithm).upper()
        if algo not in DEFAULT_HPARAMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        return SolverConfig.default(algo, total_steps=int(self.n_steps),
                                    theory_mode=self.theory_mode, **overrides)

    def fit(self, P, y=None):
        P = _check_game(P)
        trace = run_solver(P, self._config(), diagnostics=self.diagnostics,
                           init_policy=self.init_policy, timing=False)
        self.trace_ = trace
        self.state_ = trace.final_state
        self.policy_ = trace.final_state.policy
        self.average_policy_ = trace.average_policy
        self.n_iter_ = len(trace)
        self.duality_gap_ = duality_gap(P, self.policy_)
        self.n_features_in_ = P.shape[0]
        return self

    def predict(self, P=None):
        """The learned last-iterate policy."""
        check_is_fitted(self, "policy_")
        return self.policy_.copy()

    def score(self, P, y=None):
        """Negative duality gap of the last iterate on ``P`` (higher is better)."""
        check_is_fitted(self, "policy_")
        return -duality_gap(_check_game(P), self.policy_)


class NeuralNashSolver(NashSolver):
    """Same interface, trained through an MLP policy and the IPO loss."""

    def __init__(self, algorithm="OMWU", lr=None, eta=None, beta=None, n_steps=1000, seed=0):
        self.algorithm = algorithm
        self.lr = lr
        self.eta = eta
        self.beta = beta
        self.n_steps = n_steps
        self.seed = seed

    def fit(self, P, y=None):
        P = _check_game(P)
        overrides = {k: v for k, v in (("lr", self.lr), ("eta", self.eta), ("beta", self.beta))
                     if v is not None}
        cfg = NeuralConfig.default(str(self.algorithm), total_steps=int(self.n_steps),
                                   seed=self.seed, **overrides)
        trace = run_neural(P, cfg, MlpPolicy.initialize(P.shape[0], self.seed))
        self.trace_ = trace
        self.state_ = trace.final_state
        self.policy_ = trace.final_state.main.policy()
        self.average_policy_ = trace.average_policy
        self.n_iter_ = len(trace.records)
        self.duality_gap_ = duality_gap(P, self.policy_)
        self.n_features_in_ = P.shape[0]
        return self


class InteriorNash(TransformerMixin, BaseEstimator):
    """Learn the equilibrium set of a game; ``transform`` KL-projects policies onto it."""

    def __init__(self, tol=1e-10):
        self.tol = tol

    def fit(self, P, y=None):
        P = _check_game(P)
        ns = interior_ne(P)
        self.matrix_ = P
        self.nash_set_ = ns
        self.anchor_ = ns.anchor
        self.basis_ = ns.basis
        self.margin_ = ns.interior_margin
        self.n_features_in_ = P.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "nash_set_")
        X = check_array(X, dtype=float, ensure_2d=False)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected policies of length {self.n_features_in_}, got {X.shape[1]}")
        out = np.array([kl_project(self.matrix_, self.nash_set_, x, tol=self.tol) for x in X])
        return out[0] if single else out
