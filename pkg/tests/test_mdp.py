import itertools

import numpy as np
import pytest

from queuegame.analysis.mdp import ConvergenceError, buffer_mdp, mdp_optimal_throughput, relative_value_iteration
from queuegame.experiments.runs import brute_force_throughput
from queuegame.model import BufferMode


def test_single_server():
    assert mdp_optimal_throughput([0.5]) == pytest.approx(0.5, abs=1e-9)


def test_unit_servers():
    assert mdp_optimal_throughput([1.0, 1.0]) == pytest.approx(1.0, abs=1e-9)


def test_two_half_servers_hand_value():
    # alternate when both empty; from {one full} send to the empty one.
    v = mdp_optimal_throughput([0.5, 0.5])
    assert v == pytest.approx(5 / 6, abs=1e-9)
    assert v <= 23 / 24 + 1e-9


@pytest.mark.parametrize("mu", [(0.5, 0.5), (0.3, 0.8), (0.2, 0.4, 0.6)])
def test_matches_brute_force(mu):
    assert mdp_optimal_throughput(mu) == pytest.approx(brute_force_throughput(mu), abs=1e-9)


def test_transition_rows_sum_to_one():
    P, R = buffer_mdp([0.3, 0.6, 0.9])
    assert np.allclose(P.sum(axis=2), 1.0)
    assert set(np.unique(R)) <= {0.0, 1.0}


def test_no_buffer_mode():
    assert mdp_optimal_throughput([0.3, 0.7], BufferMode.NONE) == 0.7


def test_convergence_error():
    P, R = buffer_mdp([0.5, 0.5])
    with pytest.raises(ConvergenceError):
        relative_value_iteration(P, R, tol=1e-15, max_iter=2)


def test_brute_force_by_simulation():
    # the best deterministic rule, run as a Monte Carlo, reaches the reported optimum
    mu = np.array([0.5, 0.5])
    rng = np.random.default_rng(0)
    full = np.zeros(2, bool)
    acc = 0
    T = 200_000
    for _ in range(T):
        empty = np.flatnonzero(~full)
        j = empty[0] if len(empty) else 0
        if not full[j]:
            acc += 1
            full[j] = True
        full &= ~(rng.random(2) < mu)
    assert acc / T == pytest.approx(5 / 6, abs=0.005)
