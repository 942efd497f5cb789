import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import logsumexp

from kwspot.errors import DimensionMismatch, FormatError, GraphError, LengthMismatch, NoPath
from kwspot.lattice import (
    EPSILON,
    Lattice,
    ScoreKind,
    ScoreMatrix,
    enumerate_arc_paths,
    enumerate_paths,
    forward_backward,
    viterbi,
)


def random_lattice(rng):
    shape = [(0, 1, 0), (0, 2, 1), (0, 0, 2), (1, 1, 2), (1, 2, 0), (1, 3, 1),
             (2, 2, 1), (2, 3, 2), (3, 3, 0), (3, 1, 1)]
    arcs = [(s, d, u, float(w)) for (s, d, u), w in zip(shape, rng.normal(size=len(shape)))]
    return Lattice.from_arcs(4, arcs, {2: -0.5, 3: 0.0})


def test_single_arc():
    lattice = Lattice.from_arcs(2, [(0, 1, 0, 0.3)], {1: 0.0})
    result = forward_backward(lattice, np.array([[-1.2]]))
    assert result.log_total == pytest.approx(-0.9)
    assert_allclose(result.occupancy.values, [[1.0]])


def test_parallel_arcs_share_occupancy():
    lattice = Lattice.from_arcs(2, [(0, 1, 0, 0.0), (0, 1, 1, 0.0)], {1: 0.0})
    result = forward_backward(lattice, np.log([[0.5, 0.5]]))
    assert_allclose(result.occupancy.values, [[0.5, 0.5]])
    assert result.log_total == pytest.approx(0.0)


def test_forward_backward_matches_enumeration(rng):
    lattice = random_lattice(rng)
    T = 4
    x = rng.normal(size=(T, 3))
    paths = enumerate_paths(lattice, T, x)
    scores = np.array([s for _, s in paths])
    expected_total = logsumexp(scores)

    expected_gamma = np.zeros((T, 3))
    for units, score in paths:
        for t, u in enumerate(units):
            expected_gamma[t, u] += math.exp(score - expected_total)

    result = forward_backward(lattice, x)
    assert result.log_total == pytest.approx(expected_total, abs=1e-10)
    assert_allclose(result.occupancy.values, expected_gamma, atol=1e-10)
    assert_allclose(result.occupancy.values.sum(axis=1), np.ones(T), atol=1e-10)


def test_viterbi_matches_enumeration(rng):
    lattice = random_lattice(rng)
    x = rng.normal(size=(5, 3))
    paths = enumerate_paths(lattice, 5, x)
    best_units, best_score = max(paths, key=lambda p: p[1])
    units, score = viterbi(lattice, x)
    assert units == best_units
    assert score == pytest.approx(best_score, abs=1e-10)


def test_viterbi_prefers_higher_score():
    lattice = Lattice.from_arcs(2, [(0, 1, 0, 0.0), (0, 1, 1, 0.0)], {1: 0.0})
    units, score = viterbi(lattice, np.array([[0.0, 1.0]]))
    assert units == [1]
    assert score == pytest.approx(1.0)


def test_viterbi_ties_go_to_lowest_arc():
    lattice = Lattice.from_arcs(2, [(0, 1, 1, 0.0), (0, 1, 0, 0.0)], {1: 0.0})
    units, _ = viterbi(lattice, np.zeros((1, 2)))
    assert units == [1]


def test_chain_has_single_path():
    lattice = Lattice.from_arcs(4, [(0, 1, 0, 0.0), (1, 2, 1, 0.0), (2, 3, 0, 0.0)], {3: 0.0})
    assert enumerate_arc_paths(lattice, 3) == [[0, 1, 2]]
    assert enumerate_arc_paths(lattice, 2) == []


def test_no_path_of_requested_length():
    lattice = Lattice.from_arcs(3, [(0, 1, 0, 0.0), (1, 2, 0, 0.0)], {2: 0.0})
    with pytest.raises(NoPath):
        forward_backward(lattice, np.zeros((1, 1)))
    with pytest.raises(NoPath):
        viterbi(lattice, np.zeros((3, 1)))


def test_input_checks():
    lattice = Lattice.from_arcs(2, [(0, 1, 2, 0.0)], {1: 0.0})
    with pytest.raises(DimensionMismatch):
        forward_backward(lattice, np.zeros((1, 2)))
    with pytest.raises(LengthMismatch):
        forward_backward(lattice, np.zeros((1, 3)), T=2)


def test_kernels_reject_epsilon_arcs():
    lattice = Lattice.from_arcs(2, [(0, 1, EPSILON, 0.0)], {1: 0.0})
    with pytest.raises(GraphError):
        forward_backward(lattice, np.zeros((1, 1)))


def test_remove_epsilons_keeps_weights():
    lattice = Lattice.from_arcs(3, [(0, 1, EPSILON, -0.5), (1, 2, 0, -0.25), (0, 2, 1, 0.0)], {2: 0.1})
    clean = lattice.remove_epsilons()
    assert clean.is_epsilon_free
    paths = sorted(enumerate_paths(clean, 1))
    assert [u for u, _ in paths] == [[0], [1]]
    assert paths[0][1] == pytest.approx(-0.75 + 0.1)
    assert paths[1][1] == pytest.approx(0.1)


def test_remove_epsilons_rejects_cycles():
    lattice = Lattice.from_arcs(2, [(0, 1, EPSILON, 0.0), (1, 0, EPSILON, 0.0), (1, 1, 0, 0.0)], {1: 0.0})
    with pytest.raises(GraphError):
        lattice.remove_epsilons()


def test_trim_drops_dead_states():
    lattice = Lattice.from_arcs(4, [(0, 1, 0, 0.0), (0, 2, 0, 0.0), (3, 1, 0, 0.0)], {1: 0.0})
    trimmed = lattice.trim()
    assert trimmed.num_states == 2
    assert trimmed.num_arcs == 1


def test_dump_and_load(rng):
    lattice = random_lattice(rng)
    again = Lattice.load(lattice.dump())
    x = rng.normal(size=(3, 3))
    assert forward_backward(again, x).log_total == forward_backward(lattice, x).log_total


def test_load_rejects_garbage():
    with pytest.raises(FormatError):
        Lattice.load("0 1 x\n")


def test_score_matrix_validation():
    with pytest.raises(FormatError):
        ScoreMatrix(np.zeros(3))
    with pytest.raises(FormatError):
        ScoreMatrix([[np.nan]])
    with pytest.raises(FormatError):
        ScoreMatrix([[-np.inf]], ScoreKind.POSTERIOR)
    assert ScoreMatrix(np.log([[0.25, 0.75]])).is_normalized()
    assert not ScoreMatrix([[0.0, 0.0]]).is_normalized()
