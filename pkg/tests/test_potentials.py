import math

import mpmath
import numpy as np
import pytest

from nash_arena.exceptions import DomainError
from nash_arena.potentials import (
    detect_burn_in,
    fit_linear_rate,
    step_inequality_margins,
    phi_potential,
    step_scales,
    theta_potential,
)
from nash_arena.solvers import SolverConfig, Trace, TraceRecord, omwu_step, run_solver, SolverState

from conftest import NEAR_VERTEX

U3 = np.full(3, 1 / 3)


def _rps_state_at(rps, t, eta=0.1):
    s = SolverState.initial(3, NEAR_VERTEX)
    states = [s]
    for _ in range(t):
        s = omwu_step(s, rps, SolverConfig(eta=eta))
        states.append(s)
    return states


def _mp_kl(p, q):
    return mpmath.fsum(mpmath.mpf(a) * (mpmath.log(mpmath.mpf(a)) - mpmath.log(mpmath.mpf(b)))
                       for a, b in zip(p, q))


def test_theta_trivial_cases():
    pi = np.array([0.2, 0.3, 0.5])
    assert theta_potential(pi, pi, pi, 0.3, 0.5) == 0.0
    other = np.array([0.1, 0.6, 0.3])
    assert theta_potential(U3, other, pi, 0.0, 0.5) == pytest.approx(
        float((U3 * np.log(U3 / other)).sum()), abs=1e-15)
    with pytest.raises(DomainError):
        theta_potential(U3, np.array([1.0, 0.0, 0.0]), U3, 0.1, 0.5)


def test_potentials_match_high_precision_at_step_5(rps):
    states = _rps_state_at(rps, 5)
    # main policy at t = 5 is the state after 4 steps; its extrapolated partner lags by one
    pi_hat, pi_prev = states[4].policy, states[4].prev_extrapolated_policy
    eta, L = 0.1, 0.5
    theta = theta_potential(U3, pi_hat, pi_prev, eta, L)
    phi = phi_potential(U3, pi_hat, eta, rps, theta)
    with mpmath.workdps(50):
        th_ref = _mp_kl(U3, pi_hat) + 4 * mpmath.mpf(eta) ** 2 * mpmath.mpf(L) ** 2 * _mp_kl(pi_hat, pi_prev)
        g = [mpmath.fsum(mpmath.mpf(rps[i, j]) * mpmath.mpf(pi_hat[j]) for j in range(3)) for i in range(3)]
        num = mpmath.fsum((mpmath.log(mpmath.mpf(pi_hat[i])) - mpmath.log(mpmath.mpf(1) / 3))
                          * mpmath.mpf(eta) * g[i] for i in range(3))
        phi_ref = num / (th_ref + 2 / mpmath.e) ** 2
    assert theta == pytest.approx(float(th_ref), abs=1e-12)
    assert phi == pytest.approx(float(phi_ref), abs=1e-12)


def test_phi_trivial_cases(rps):
    pi = np.array([0.2, 0.3, 0.5])
    assert phi_potential(pi, pi, 0.1, rps, 0.0) == 0.0
    assert phi_potential(U3, pi, 0.1, np.zeros((3, 3)), 0.5) == 0.0


def test_step_scales_trivial(rps):
    assert step_scales(U3, U3, U3, 0.3, rps) == (0.0, 0.0, 0.0, 0.0)
    pi = np.array([0.2, 0.3, 0.5])
    assert step_scales(pi, pi, pi, 0.0, rps) == (0.0, 0.0, 0.0, 0.0)


def test_step_scales_near_vertex(rps):
    s = SolverState.initial(3, NEAR_VERTEX)
    new = omwu_step(s, rps, SolverConfig(eta=0.1))
    pi_hat, prev, pi_t = s.policy, s.prev_extrapolated_policy, new.prev_extrapolated_policy
    k, k_hat, m, m_hat = step_scales(pi_hat, prev, pi_t, 0.1, rps)
    c, n = 0.05, 3
    assert abs(m_hat) <= math.exp(c) * n * k_hat and abs(m) <= math.exp(c) * n * k
    with mpmath.workdps(50):
        def lse(pi, w):
            g = [mpmath.mpf(0.1) * mpmath.fsum(mpmath.mpf(rps[i, j]) * mpmath.mpf(w[j]) for j in range(3))
                 for i in range(3)]
            return float(mpmath.log(mpmath.fsum(mpmath.mpf(p) * mpmath.exp(x) for p, x in zip(pi, g)))), \
                float(max(mpmath.mpf(p) * abs(x) for p, x in zip(pi, g)))
        m_ref, k_ref = lse(pi_hat, prev)
        mh_ref, kh_ref = lse(pi_hat, pi_t)
    assert (k, k_hat, m, m_hat) == pytest.approx((k_ref, kh_ref, m_ref, mh_ref), abs=1e-12)


def _theta_trace(vals):
    return [TraceRecord(i + 1, 0.0, 0.0, v, v) for i, v in enumerate(vals)]


def test_detect_burn_in_examples():
    assert detect_burn_in([0.9, 0.5, 0.2], 0.33) == 2
    assert detect_burn_in([0.9, 0.5], 0.33) is None
    with pytest.raises(ValueError):
        detect_burn_in([0.9, None], 0.1)


def test_detect_burn_in_rps_matches_scan(rps):
    tr = run_solver(rps, SolverConfig(eta=0.1, total_steps=20_000), diagnostics=True,
                    init_policy=NEAR_VERTEX, timing=False)
    idx = detect_burn_in(tr, 1 / 3)
    scan = next(i for i, r in enumerate(tr.records) if r.theta_pot < 1 / 3)
    assert idx == scan


def _synthetic(vals):
    tr = Trace(config=SolverConfig())
    tr.records = [TraceRecord(i + 1, 0.0, 0.0, float(v), None) for i, v in enumerate(vals)]
    return tr


def test_fit_exact_exponential():
    t = np.arange(1, 201)
    rep = fit_linear_rate(_synthetic(np.exp(-0.01 * t)), window=(0, 200))
    assert rep.linear_rate == pytest.approx(-0.01, abs=1e-9)
    assert rep.fit_r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_constant_trace():
    rep = fit_linear_rate(_synthetic(np.full(50, 0.3)), window=(0, 50))
    assert rep.linear_rate == 0.0 and rep.fit_r2 == 0.0


def test_fit_errors_and_clipping():
    with pytest.raises(ValueError):
        fit_linear_rate(_synthetic([0.1, 0.05]), window=(0, 2))
    rep = fit_linear_rate(_synthetic([0.1, 0.01, 0.0, 0.001]), window=(0, 4))
    assert rep.clipped
    with pytest.raises(ValueError):
        fit_linear_rate(_synthetic([0.1] * 5), window=(2, 9))


def test_fit_rps_acceptance_run(rps):
    tr = run_solver(rps, SolverConfig(eta=0.1, total_steps=100_000), diagnostics=True,
                    init_policy=NEAR_VERTEX, timing=False)
    rep = fit_linear_rate(tr)
    assert rep.burn_in_step is not None
    assert rep.linear_rate < 0 and rep.fit_r2 > 0.95
    assert 0 <= rep.fit_r2 <= 1


def test_step_inequality_margins_on_trajectory(sampled_games):
    from nash_arena.equilibrium import interior_ne, kl_project

    P = sampled_games[2].matrix
    eta = 0.9
    s = SolverState.initial(10)
    star = kl_project(P, interior_ne(P), s.policy)
    for _ in range(300):
        new = omwu_step(s, P, SolverConfig(eta=eta))
        mg = step_inequality_margins(s.policy, s.prev_extrapolated_policy, new.prev_extrapolated_policy,
                           new.policy, P, eta, star)
        assert min(mg.values()) >= -1e-10, mg
        s = new
