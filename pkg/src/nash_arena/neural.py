"""Parametrized policies trained through a generalized IPO regression loss.

    L(theta) = sum_{y, y'} rho[y, y'] * (u_y - u_y')^2,
    u = log pi_theta - log pi_ref - target_scale * (P @ mu)

Because only differences of ``u`` enter, the gradient with respect to the
logits is ``2 ((r + c) * u - rho @ u - rho.T @ u)`` with row sums ``r`` and
column sums ``c`` of ``rho``; the softmax normalizer drops out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._math import log_softmax, require_positive, softmax
from ._rng import make_rng
from .equilibrium import duality_gap
from .exceptions import InvalidDimensionError
from .solvers import (
    ALGORITHMS,
    SolverConfig,
    TraceRecord,
    mpo_eta,
    mpo_objective,
    nested_inner_solve,
    proximal_objective,
    sppo_objective,
)
from .validation import check_policy, check_preference_matrix

HIDDEN = 10
INPUT_DIM = 10
_INIT_KEY = 0x4D4C50  # stream key for network initialisation

# neural column of the published hyperparameter table: ``lr`` is the optimizer
# step for single-step methods and the inner step for nested ones
NEURAL_HPARAMS = {
    "OMWU": {"lr": 100.0},
    "OMD": {"lr": 10.0},
    "OMD_REG": {"lr": 0.0002, "beta": 0.001},
    "EGPO": {"lr": 0.09, "beta": 0.001},
    "SPPO": {"lr": 0.03, "eta": 0.1},
    "MPO": {"lr": 0.09, "beta": 0.001},
    "ONPO": {"lr": 0.01, "eta": 0.01},
}


class TabularPolicy:
    """Logits as the parameters; the identity network."""

    def __init__(self, theta):
        self.theta = np.array(theta, dtype=float)
        if self.theta.ndim != 1:
            raise InvalidDimensionError("tabular logits must be a vector")

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    def logits(self) -> np.ndarray:
        return self.theta.copy()

    def policy(self) -> np.ndarray:
        return softmax(self.theta)

    def params(self) -> np.ndarray:
        return self.theta.copy()

    def with_params(self, vec) -> "TabularPolicy":
        return TabularPolicy(vec)

    def backward(self, g_logits) -> np.ndarray:
        return np.asarray(g_logits, dtype=float).copy()


class MlpPolicy:
    """Three linear layers with ReLU between them, fed a frozen Gaussian input."""

    _names = ("W1", "b1", "W2", "b2", "W3", "b3")

    def __init__(self, W1, b1, W2, b2, W3, b3, x, seed=0):
        self.W1, self.b1 = np.asarray(W1, float), np.asarray(b1, float)
        self.W2, self.b2 = np.asarray(W2, float), np.asarray(b2, float)
        self.W3, self.b3 = np.asarray(W3, float), np.asarray(b3, float)
        self.x = np.asarray(x, float)
        self.seed = int(seed)

    @classmethod
    def initialize(cls, n: int, seed: int = 0, hidden: int = HIDDEN,
                   input_dim: int = INPUT_DIM) -> "MlpPolicy":
        """Xavier-normal hidden layers, zero biases and a zero output layer."""
        if n < 1:
            raise InvalidDimensionError("need at least one action")
        rng = make_rng(seed, _INIT_KEY)
        x = rng.standard_normal(input_dim)
        W1 = rng.standard_normal((hidden, input_dim)) * math.sqrt(2.0 / (input_dim + hidden))
        W2 = rng.standard_normal((hidden, hidden)) * math.sqrt(2.0 / (2 * hidden))
        return cls(W1, np.zeros(hidden), W2, np.zeros(hidden),
                   np.zeros((n, hidden)), np.zeros(n), x, seed)

    @property
    def n(self) -> int:
        return self.W3.shape[0]

    def _forward(self):
        a1 = self.W1 @ self.x + self.b1
        h1 = np.maximum(a1, 0.0)
        a2 = self.W2 @ h1 + self.b2
        h2 = np.maximum(a2, 0.0)
        return a1, h1, a2, h2, self.W3 @ h2 + self.b3

    def logits(self) -> np.ndarray:
        return self._forward()[-1]

    def policy(self) -> np.ndarray:
        return softmax(self.logits())

    def arrays(self) -> tuple:
        return tuple(getattr(self, k) for k in self._names)

    def params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_params(self, vec) -> "MlpPolicy":
        vec = np.asarray(vec, dtype=float)
        total = sum(a.size for a in self.arrays())
        if vec.size != total:
            raise InvalidDimensionError(f"expected {total} parameters, got {vec.size}")
        out, i = [], 0
        for a in self.arrays():
            out.append(vec[i:i + a.size].reshape(a.shape))
            i += a.size
        return MlpPolicy(*out, self.x, self.seed)

    def backward(self, g_logits) -> np.ndarray:
        """Flat parameter gradient given the gradient with respect to the logits."""
        g = np.asarray(g_logits, dtype=float)
        a1, h1, a2, h2, _ = self._forward()
        gW3 = np.outer(g, h2)
        ga2 = (self.W3.T @ g) * (a2 > 0)
        gW2 = np.outer(ga2, h1)
        ga1 = (self.W2.T @ ga2) * (a1 > 0)
        gW1 = np.outer(ga1, self.x)
        return np.concatenate([gW1.ravel(), ga1, gW2.ravel(), ga2, gW3.ravel(), g])

    def to_dict(self) -> dict:
        layers = [{"name": k, "shape": list(a.shape), "data": [float(v) for v in a.ravel()]}
                  for k, a in zip(self._names, self.arrays())]
        return {"seed": self.seed, "input": [float(v) for v in self.x], "layers": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpPolicy":
        arrs = {L["name"]: np.asarray(L["data"], float).reshape(L["shape"]) for L in d["layers"]}
        return cls(*(arrs[k] for k in cls._names), d["input"], d.get("seed", 0))


def mlp_forward(policy: MlpPolicy) -> np.ndarray:
    return policy.logits()


def _as_model(model):
    if isinstance(model, (TabularPolicy, MlpPolicy)):
        return model
    return TabularPolicy(model)


@dataclass(frozen=True)
class IpoBatchSpec:
    """Pair distribution, opponent, reference and target scaling of one IPO loss.

    ``rho=None`` means uniform over all ordered pairs. ``target_scale`` is 1 for
    the unregularized updates and ``1/beta`` for the regularized ones.
    ``ref_log`` optionally gives ``log pi_ref`` directly, which stays finite when
    the stop-gradient reference has underflowed coordinates.
    """

    mu: np.ndarray
    ref: np.ndarray
    rho: np.ndarray | None = None
    target_scale: float = 1.0
    optimizer_lr: float | None = None
    ref_log: np.ndarray | None = None

    def __post_init__(self):
        mu = check_policy(self.mu, name="mu", atol=1e-9)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "ref", np.asarray(self.ref, dtype=float))
        if self.rho is not None:
            rho = np.asarray(self.rho, dtype=float)
            if rho.shape != (mu.size, mu.size):
                raise InvalidDimensionError("rho must be an n x n pair distribution")
            if np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-9:
                raise ValueError("rho must be a probability distribution over pairs")
            object.__setattr__(self, "rho", rho)

    def pair_weights(self) -> np.ndarray:
        n = self.mu.size
        return np.full((n, n), 1.0 / n**2) if self.rho is None else self.rho


def _residual(z, spec: IpoBatchSpec, P) -> np.ndarray:
    if spec.ref_log is not None:
        log_ref = np.asarray(spec.ref_log, dtype=float)
    else:
        log_ref = np.log(require_positive(spec.ref, "reference policy"))
    return log_softmax(z) - log_ref - spec.target_scale * (P @ spec.mu)


def ipo_loss(model, spec: IpoBatchSpec, P) -> float:
    model = _as_model(model)
    P = np.asarray(P, dtype=float)
    u = _residual(model.logits(), spec, P)
    rho = spec.pair_weights()
    diff = u[:, None] - u[None, :]
    return float(np.sum(rho * diff**2))


def ipo_logit_grad(z, spec: IpoBatchSpec, P) -> np.ndarray:
    u = _residual(z, spec, np.asarray(P, dtype=float))
    rho = spec.pair_weights()
    return 2.0 * ((rho.sum(axis=1) + rho.sum(axis=0)) * u - rho @ u - rho.T @ u)


def ipo_grad(model, spec: IpoBatchSpec, P) -> np.ndarray:
    """Gradient of ``ipo_loss`` with respect to the flat parameters of ``model``."""
    model = _as_model(model)
    return model.backward(ipo_logit_grad(model.logits(), spec, P))


def ipo_step(model, spec: IpoBatchSpec, P, lr: float | None = None):
    model = _as_model(model)
    lr = spec.optimizer_lr if lr is None else lr
    if lr is None:
        raise ValueError("no optimizer step size given")
    return model.with_params(model.params() - lr * ipo_grad(model, spec, P))


def optimizer_lr(algorithm: str, eta: float, n: int, beta: float = 0.0) -> float:
    """Optimizer step reproducing the tabular update: ``eta n/4``, or ``eta beta n/4`` if regularized."""
    if algorithm in ("OMD_REG", "EGPO"):
        return eta * beta * n / 4.0
    return eta * n / 4.0


@dataclass(frozen=True)
class NeuralConfig:
    algorithm: str = "OMWU"
    lr: float = 100.0
    eta: float = 0.1
    beta: float = 0.0
    inner_max_steps: int = 10
    inner_tol: float = 1e-5
    total_steps: int = 1000
    ref_refresh_period: int = 1000
    seed: int = 0

    @classmethod
    def default(cls, algorithm: str, **overrides) -> "NeuralConfig":
        algorithm = algorithm.upper()
        if algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
        return cls(algorithm=algorithm, **{**NEURAL_HPARAMS[algorithm], **overrides})

    def inner_config(self, outer_eta: float | None = None) -> SolverConfig:
        return SolverConfig(algorithm=self.algorithm, eta=self.eta if outer_eta is None else outer_eta,
                            beta=self.beta, inner_lr=self.lr, inner_max_steps=self.inner_max_steps,
                            inner_tol=self.inner_tol, total_steps=self.total_steps,
                            ref_refresh_period=self.ref_refresh_period, seed=self.seed)


@dataclass(frozen=True)
class NeuralState:
    main: object
    extrapolated: object
    prev_extrapolated_policy: np.ndarray
    reference: np.ndarray  # reference policy (probabilities)
    step: int = 0

    @classmethod
    def initial(cls, model) -> "NeuralState":
        model = _as_model(model)
        pi = model.policy()
        return cls(model, model, pi, np.full(model.n, 1.0 / model.n), 0)


def _nested(model, objective, gradient, cfg: SolverConfig):
    def f(w):
        return objective(model.with_params(w).logits())

    def g(w):
        m = model.with_params(w)
        return m.backward(gradient(m.logits()))

    w, _ = nested_inner_solve(f, g, model.params(), cfg, lr=cfg.inner_lr, gauged=False)
    return model.with_params(w)


def neural_solver_step(state: NeuralState, cfg: NeuralConfig, P) -> NeuralState:
    """One outer step of ``cfg.algorithm`` through the parametrized policy."""
    P = np.asarray(P, dtype=float)
    model = state.main
    if model.n != P.shape[0]:
        raise InvalidDimensionError(f"policy has {model.n} actions, game has {P.shape[0]}")
    pi = model.policy()
    log_pi = log_softmax(model.logits())
    algo, lr = cfg.algorithm, cfg.lr
    ext = None
    if algo == "OMWU":
        ext = ipo_step(model, IpoBatchSpec(state.prev_extrapolated_policy, pi, ref_log=log_pi), P, lr)
        pi_ext = ext.policy()
        main = ipo_step(model, IpoBatchSpec(pi_ext, pi, ref_log=log_pi), P, lr)
    elif algo == "OMD":
        main = ipo_step(model, IpoBatchSpec(pi, pi, ref_log=log_pi), P, lr)
    elif algo in ("OMD_REG", "EGPO"):
        if not cfg.beta > 0:
            raise ValueError(f"{algo} needs beta > 0")
        spec = IpoBatchSpec(pi, state.reference, target_scale=1.0 / cfg.beta)
        main = ipo_step(model, spec, P, lr)
        if algo == "EGPO":
            ext = main
            spec = IpoBatchSpec(ext.policy(), state.reference, target_scale=1.0 / cfg.beta)
            main = ipo_step(model, spec, P, lr)
    elif algo == "SPPO":
        obj, grad = sppo_objective(pi, cfg.eta * (P @ pi))
        main = _nested(model, obj, grad, cfg.inner_config())
    elif algo == "MPO":
        t = state.step
        inner = cfg.inner_config()
        if t > 0 and t % cfg.ref_refresh_period == 0:
            state = NeuralState(state.main, state.extrapolated, state.prev_extrapolated_policy, pi, t)
        obj, grad = mpo_objective(pi, state.reference, P, cfg.beta, mpo_eta(t, cfg.total_steps))
        main = _nested(model, obj, grad, inner)
    elif algo == "ONPO":
        inner = cfg.inner_config()
        anchor = model.logits()
        obj, grad = proximal_objective(anchor, P @ state.prev_extrapolated_policy, cfg.eta)
        ext = _nested(model, obj, grad, inner)
        obj, grad = proximal_objective(anchor, P @ ext.policy(), cfg.eta)
        main = _nested(model, obj, grad, inner)
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    ext = main if ext is None else ext
    return NeuralState(main, ext, ext.policy(), state.reference, state.step + 1)


@dataclass
class NeuralTrace:
    config: NeuralConfig
    records: list = field(default_factory=list)
    final_state: NeuralState | None = None
    average_policy: np.ndarray | None = None


def run_neural(P, cfg: NeuralConfig, model=None) -> NeuralTrace:
    """Train an MLP (or ``model``) for ``cfg.total_steps`` outer steps, recording gaps."""
    P = check_preference_matrix(P, normalized=False)
    model = MlpPolicy.initialize(P.shape[0], cfg.seed) if model is None else _as_model(model)
    state = NeuralState.initial(model)
    trace = NeuralTrace(cfg)
    avg = np.zeros(P.shape[0])
    for k in range(cfg.total_steps):
        state = neural_solver_step(state, cfg, P)
        pi = state.main.policy()
        avg += pi
        trace.records.append(TraceRecord(k + 1, duality_gap(P, pi), duality_gap(P, avg / (k + 1))))
    trace.final_state = state
    trace.average_policy = avg / cfg.total_steps if cfg.total_steps else state.main.policy()
    return trace


__all__ = [
    "IpoBatchSpec", "MlpPolicy", "NeuralConfig", "NeuralState", "NeuralTrace", "TabularPolicy",
    "ipo_grad", "ipo_logit_grad", "ipo_loss", "ipo_step", "mlp_forward", "neural_solver_step",
    "optimizer_lr", "run_neural",
]
