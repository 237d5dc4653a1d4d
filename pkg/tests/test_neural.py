import json

import numpy as np
import pytest

from nash_arena._math import log_softmax, softmax
from nash_arena._rng import make_rng
from nash_arena.exceptions import DomainError, InvalidDimensionError
from nash_arena.game import sample_preference_matrix
from nash_arena.neural import (
    IpoBatchSpec,
    MlpPolicy,
    NeuralConfig,
    NeuralState,
    TabularPolicy,
    ipo_grad,
    ipo_loss,
    ipo_step,
    mlp_forward,
    neural_solver_step,
    optimizer_lr,
    run_neural,
)
from nash_arena.solvers import SolverConfig, SolverState, egpo_step, omd_step, omwu_step


def _randomize(model, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    return model.with_params(rng.normal(scale=scale, size=model.params().size))


def _forward_oracle(model):
    # plain loops, no shared code with the vectorized pass
    def dense(W, b, v, relu):
        out = []
        for i in range(len(b)):
            s = b[i]
            for j in range(len(v)):
                s += W[i][j] * v[j]
            out.append(max(s, 0.0) if relu else s)
        return out

    h = dense(model.W1.tolist(), model.b1.tolist(), model.x.tolist(), True)
    h = dense(model.W2.tolist(), model.b2.tolist(), h, True)
    return np.array(dense(model.W3.tolist(), model.b3.tolist(), h, False))


def test_initial_policy_is_uniform():
    for n in (3, 10, 100):
        m = MlpPolicy.initialize(n, seed=7)
        assert np.max(np.abs(m.policy() - 1 / n)) <= 1e-16
    zero = MlpPolicy.initialize(5).with_params(np.zeros(MlpPolicy.initialize(5).params().size))
    assert np.allclose(zero.policy(), 0.2, atol=1e-16)


def test_initialization_deterministic_and_xavier_shaped():
    a, b = MlpPolicy.initialize(4, seed=3), MlpPolicy.initialize(4, seed=3)
    assert np.array_equal(a.params(), b.params()) and np.array_equal(a.x, b.x)
    assert not np.array_equal(a.x, MlpPolicy.initialize(4, seed=4).x)
    big = [MlpPolicy.initialize(2, seed=s).W1 for s in range(200)]
    assert np.std(big) == pytest.approx(np.sqrt(2 / 20), rel=0.05)


def test_forward_matches_loop_oracle():
    m = _randomize(MlpPolicy.initialize(6, seed=0), 0)
    assert np.max(np.abs(mlp_forward(m) - _forward_oracle(m))) <= 1e-12


def test_checkpoint_round_trip():
    m = _randomize(MlpPolicy.initialize(4, seed=2), 1)
    d = json.loads(json.dumps(m.to_dict()))
    assert [L["shape"] for L in d["layers"]] == [[10, 10], [10], [10, 10], [10], [4, 10], [4]]
    back = MlpPolicy.from_dict(d)
    assert np.array_equal(back.params(), m.params()) and np.array_equal(back.logits(), m.logits())


def test_with_params_checks_size():
    m = MlpPolicy.initialize(3)
    with pytest.raises(InvalidDimensionError):
        m.with_params(np.zeros(5))


def test_loss_trivial_cases(rps):
    pi = np.array([0.2, 0.3, 0.5])
    model = TabularPolicy(np.log(pi))
    assert ipo_loss(model, IpoBatchSpec(pi, pi), np.zeros((3, 3))) == pytest.approx(0, abs=1e-30)
    u = np.full(3, 1 / 3)
    assert ipo_loss(np.zeros(3), IpoBatchSpec(u, u), rps) == pytest.approx(0, abs=1e-30)


def test_loss_brute_force_rps(rps):
    u = np.full(3, 1 / 3)
    mu = np.array([1.0, 0, 0])
    target = rps @ mu
    brute = sum((target[y] - target[z]) ** 2 for y in range(3) for z in range(3)) / 9
    assert ipo_loss(np.zeros(3), IpoBatchSpec(mu, u), rps) == pytest.approx(brute, abs=1e-15)


def test_loss_with_pair_distribution(rps):
    rng = np.random.default_rng(0)
    rho = rng.random((3, 3))
    rho /= rho.sum()
    theta = rng.normal(size=3)
    ref = softmax(rng.normal(size=3))
    mu = softmax(rng.normal(size=3))
    spec = IpoBatchSpec(mu, ref, rho=rho, target_scale=2.0)
    pi = softmax(theta)
    brute = 0.0
    for y in range(3):
        for z in range(3):
            logr = np.log(pi[y] * ref[z] / (pi[z] * ref[y]))
            brute += rho[y, z] * (logr - 2.0 * ((rps @ mu)[y] - (rps @ mu)[z])) ** 2
    assert ipo_loss(theta, spec, rps) == pytest.approx(brute, rel=1e-12)


def test_spec_validation():
    u = np.full(3, 1 / 3)
    with pytest.raises(ValueError):
        IpoBatchSpec(u, u, rho=np.ones((3, 3)))
    with pytest.raises(InvalidDimensionError):
        IpoBatchSpec(u, u, rho=np.full((2, 2), 0.25))
    with pytest.raises(ValueError):
        IpoBatchSpec(np.array([0.5, 0.6, -0.1]), u)
    with pytest.raises(DomainError):
        ipo_loss(np.zeros(3), IpoBatchSpec(u, np.array([1.0, 0, 0])), np.zeros((3, 3)))


def test_gradient_zero_at_minimizer():
    pi = np.array([0.2, 0.3, 0.5])
    g = ipo_grad(np.log(pi), IpoBatchSpec(pi, pi), np.zeros((3, 3)))
    assert np.max(np.abs(g)) <= 1e-15


def test_gradient_closed_form_at_self_reference(sampled_games):
    P = sampled_games[0].matrix
    rng = np.random.default_rng(5)
    theta = rng.normal(size=10)
    mu = softmax(rng.normal(size=10))
    g = ipo_grad(theta, IpoBatchSpec(mu, softmax(theta)), P)
    target = P @ mu
    assert np.allclose(g, -(4 / 10) * (target - target.mean()), atol=1e-14)


def _fd(f, w, h=1e-5):
    out = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        out[i] = (f(w + e) - f(w - e)) / (2 * h)
    return out


def _fd_ok(g, fd):
    err = np.abs(g - fd)
    return np.all((err <= 1e-8) | (err <= 1e-4 * np.abs(fd)))


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed, rps):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=3)
    spec = IpoBatchSpec(softmax(rng.normal(size=3)), softmax(rng.normal(size=3)))
    g = ipo_grad(theta, spec, rps)
    assert _fd_ok(g, _fd(lambda w: ipo_loss(w, spec, rps), theta))
    model = _randomize(MlpPolicy.initialize(3, seed=seed), seed)
    g = ipo_grad(model, spec, rps)
    assert _fd_ok(g, _fd(lambda w: ipo_loss(model.with_params(w), spec, rps), model.params()))


def test_optimizer_lr_scaling():
    assert optimizer_lr("OMWU", 0.1, 10) == pytest.approx(0.25)
    assert optimizer_lr("EGPO", 0.1, 10, beta=0.01) == pytest.approx(0.0025)


def test_tabular_ipo_step_reproduces_additive_update(sampled_games):
    P = sampled_games[4].matrix
    rng = np.random.default_rng(1)
    eta = 0.3
    for _ in range(10):
        theta = rng.normal(size=10)
        mu = softmax(rng.normal(size=10))
        pi = softmax(theta)
        out = ipo_step(theta, IpoBatchSpec(mu, pi, ref_log=log_softmax(theta)), P, optimizer_lr("OMWU", eta, 10))
        target = P @ mu
        expected = softmax(theta + eta * (target - target.mean()))
        assert np.max(np.abs(out.policy() - expected)) <= 1e-10


@pytest.mark.parametrize("algo,step,kw", [
    ("OMD", omd_step, {"eta": 0.4}),
    ("OMWU", omwu_step, {"eta": 0.1}),
    ("OMD_REG", omd_step, {"eta": 0.001, "beta": 0.001}),
    ("EGPO", egpo_step, {"eta": 0.01, "beta": 0.001}),
])
def test_tabular_network_matches_exact_solver(algo, step, kw, rps):
    theta0 = np.log(np.array([0.97, 0.015, 0.015]))
    s = SolverState.initial(3, (0.97, 0.015, 0.015))
    cfg = SolverConfig(algorithm=algo, **kw)
    ncfg = NeuralConfig(algorithm=algo, lr=optimizer_lr(algo, kw["eta"], 3, kw.get("beta", 0.0)), **kw)
    ns = NeuralState.initial(TabularPolicy(theta0))
    for _ in range(5):
        s = step(s, rps, cfg)
        ns = neural_solver_step(ns, ncfg, rps)
        assert np.max(np.abs(ns.main.policy() - s.policy)) <= 1e-8


@pytest.mark.parametrize("algo", ["OMWU", "OMD", "OMD_REG", "EGPO", "SPPO", "MPO", "ONPO"])
def test_zero_game_leaves_weights_unchanged(algo):
    m = MlpPolicy.initialize(4, seed=1)
    state = NeuralState.initial(m)
    new = neural_solver_step(state, NeuralConfig.default(algo), np.zeros((4, 4)))
    assert np.max(np.abs(new.main.params() - m.params())) <= 1e-12


def test_step_rejects_wrong_size(rps):
    with pytest.raises(InvalidDimensionError):
        neural_solver_step(NeuralState.initial(MlpPolicy.initialize(4)), NeuralConfig(), rps)


def test_neural_omwu_large_game_gap_decreases():
    P = sample_preference_matrix(100, 5, 0).matrix
    tr = run_neural(P, NeuralConfig.default("OMWU", total_steps=1000))
    gaps = [r.gap_last for r in tr.records]
    assert gaps[-1] < 0.5 * gaps[0]
    assert np.mean(gaps[-100:]) < np.mean(gaps[:100])
