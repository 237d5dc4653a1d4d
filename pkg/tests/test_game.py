import json

import numpy as np
import pytest

from nash_arena.exceptions import InvalidDimensionError
from nash_arena.game import (
    GameInstance,
    orthonormal_complement,
    preference_probability,
    rps_matrix,
    sample_preference_matrix,
    validate_preference_matrix,
)
from nash_arena.oracle import highprec_sample


def test_rps_entries(rps):
    expected = [[0, 0.5, -0.5], [-0.5, 0, 0.5], [0.5, -0.5, 0]]
    assert np.array_equal(rps, expected)
    assert np.array_equal(rps + rps.T, np.zeros((3, 3)))
    assert np.allclose(rps @ np.full(3, 1 / 3), 0, atol=1e-16)


def test_rps_is_read_only(rps):
    with pytest.raises(ValueError):
        rps[0, 0] = 1.0


def test_sampler_degenerate_block_is_zero():
    g = sample_preference_matrix(4, 3, 7)
    assert np.array_equal(g.matrix, np.zeros((4, 4)))


def test_sampler_planted_equilibrium_n4():
    g = sample_preference_matrix(4, 1, 0)
    (v,) = g.planted_equilibria
    assert np.all(v > 0) and abs(v.sum() - 1) < 1e-15
    assert np.max(np.abs(g.matrix @ v)) <= 1e-10


def test_sampler_matches_high_precision_rebuild():
    g = sample_preference_matrix(10, 2, 42)
    P = g.matrix
    assert np.max(np.abs(P + P.T)) <= 1e-12
    assert np.max(np.abs(P)) == 0.5
    ref = np.array(highprec_sample(10, 2, 42))
    assert np.max(np.abs(P - ref)) <= 1e-12


def test_sampler_is_deterministic():
    a = sample_preference_matrix(10, 2, 5)
    b = sample_preference_matrix(10, 2, 5)
    assert a.matrix.tobytes() == b.matrix.tobytes()
    assert not np.array_equal(a.matrix, sample_preference_matrix(10, 2, 6).matrix)


def test_sampler_accepts_any_64bit_seed():
    g = sample_preference_matrix(5, 1, 2**63 + 11)
    assert np.max(np.abs(g.matrix)) == 0.5
    assert sample_preference_matrix(5, 1, -1).matrix.tobytes() == \
        sample_preference_matrix(5, 1, 2**64 - 1).matrix.tobytes()


@pytest.mark.parametrize("n,m", [(1, 0), (4, 4), (4, 5), (3, -1)])
def test_sampler_rejects_bad_dimensions(n, m):
    with pytest.raises(InvalidDimensionError):
        sample_preference_matrix(n, m, 0)


def test_orthonormal_complement():
    V = np.array([[1.0, 2.0, 3.0, 4.0]])
    M = orthonormal_complement(V)
    assert M.shape == (4, 3)
    assert np.allclose(M.T @ M, np.eye(3), atol=1e-14)
    assert np.allclose(V @ M, 0, atol=1e-14)


def test_validate_examples(rps):
    assert validate_preference_matrix(rps).passed
    assert validate_preference_matrix(np.zeros((3, 3))).passed
    # P[1, 0] = -0.4 against P[0, 1] = 0.5 leaves a skew defect of 0.1
    P = np.zeros((2, 2))
    P[0, 1], P[1, 0] = 0.5, -0.4
    rep = validate_preference_matrix(P)
    assert not rep.passed and rep.skew_defect == pytest.approx(0.1, abs=1e-15)
    # taken literally (P[1, 0] = +0.4) the defect is 0.9
    P[1, 0] = 0.4
    rep = validate_preference_matrix(P)
    assert not rep.passed and rep.skew_defect == pytest.approx(0.9, abs=1e-15)


def test_validate_reports_diagonal_and_scale():
    P = np.array([[0.1, 0.0], [0.0, 0.0]])
    rep = validate_preference_matrix(P)
    assert rep.diagonal_defect == pytest.approx(0.1) and not rep.passed
    P = np.array([[0.0, 0.7], [-0.7, 0.0]])
    rep = validate_preference_matrix(P)
    assert rep.normalization_defect == pytest.approx(0.2) and not rep.passed


def test_validate_rejects_non_square():
    with pytest.raises(InvalidDimensionError):
        validate_preference_matrix(np.zeros((2, 3)))


def test_preference_probability(rps):
    assert preference_probability(rps, 0, 1) == 1.0
    assert preference_probability(rps, 2, 2) == 0.5
    assert preference_probability(np.zeros((3, 3)), 0, 1) == 0.5
    with pytest.raises(IndexError):
        preference_probability(rps, 0, 3)


def test_json_round_trip(tmp_path):
    g = sample_preference_matrix(6, 2, 3)
    d = json.loads(g.to_json())
    assert set(d) == {"n", "m", "seed", "entries"} and len(d["entries"]) == 36
    path = tmp_path / "g.json"
    g.save(path)
    h = GameInstance.load(path)
    assert h.matrix.tobytes() == g.matrix.tobytes() and (h.m, h.seed) == (2, 3)


def test_from_dict_checks_entry_count():
    with pytest.raises(InvalidDimensionError):
        GameInstance.from_dict({"n": 3, "entries": [0.0] * 8})
