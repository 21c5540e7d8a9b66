import pytest
from hypothesis import given
from hypothesis import strategies as st

from queuegame.analysis.bounds import lower_bound_acceptance, monte_carlo_acceptance
from queuegame.model import ContractViolation


@given(k=st.integers(1, 50))
def test_unit_rate_servers_always_clear(k):
    assert lower_bound_acceptance(1, k) == 1.0


def test_formula_values():
    assert lower_bound_acceptance(2, 2) == pytest.approx(2 / 3)
    assert lower_bound_acceptance(4, 3) == 0.5


@given(n=st.integers(1, 30), k=st.integers(1, 30))
def test_monotone_and_threshold(n, k):
    v = lower_bound_acceptance(n, k)
    assert 0 < v <= 1
    assert lower_bound_acceptance(n, k + 1) > v or v == 1.0
    assert lower_bound_acceptance(n + 1, k) <= v
    assert (v > 0.5) == (k > n - 1)


def test_invalid_arguments():
    with pytest.raises(ContractViolation):
        lower_bound_acceptance(0, 2)
    with pytest.raises(ContractViolation):
        monte_carlo_acceptance(2, 2, 0)


def test_monte_carlo_single_server_rate_one():
    est = monte_carlo_acceptance(1, 4, 10_000)
    assert est.mean == 1.0


@pytest.mark.parametrize("n,k", [(2, 2), (3, 5)])
def test_monte_carlo_agrees(n, k):
    est = monte_carlo_acceptance(n, k, 1_000_000, seed=1)
    assert est.within(lower_bound_acceptance(n, k))


def test_monte_carlo_against_naive_loop():
    # independent step-by-step simulation of the same backlogged queue
    import numpy as np

    rng = np.random.default_rng(5)
    n, k, T = 3, 2, 100_000
    full = np.zeros(k, bool)
    acc = 0
    for _ in range(T):
        j = rng.integers(k)
        if not full[j]:
            acc += 1
            full[j] = True
        full &= ~(rng.random(k) < 1 / n)
    est = monte_carlo_acceptance(n, k, T, seed=2)
    assert abs(acc / T - est.mean) < 0.01
