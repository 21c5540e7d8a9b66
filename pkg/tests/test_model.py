import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from queuegame.model import (
    BufferMode,
    ContractViolation,
    ServerState,
    SystemConfig,
    SystemState,
    resolve_server,
    sample_arrivals,
    step,
)

from conftest import draws


def cfg(lam, mu, mode=BufferMode.UNIT, T=10):
    return SystemConfig(lam, mu, mode, T, 0)


class TestConfig:
    def test_rates_out_of_range(self):
        with pytest.raises(ContractViolation):
            cfg((1.2,), (0.5,))
        with pytest.raises(ContractViolation):
            cfg((0.2,), (-0.1,))

    def test_empty_sides_rejected(self):
        with pytest.raises(ContractViolation):
            cfg((), (0.5,))

    def test_load_ratio(self):
        assert cfg((0.2, 0.2), (0.5, 0.3)).load_ratio == pytest.approx(0.5)


class TestArrivals:
    def test_zero_rates(self):
        c = cfg((0, 0, 0), (0.5,))
        rng = np.random.default_rng(1)
        assert not any(sample_arrivals(c, rng).any() for _ in range(200))

    def test_certain_arrivals(self):
        c = cfg((1, 1), (0.5,))
        rng = np.random.default_rng(1)
        assert all(sample_arrivals(c, rng).all() for _ in range(200))

    def test_half_rate_concentration(self):
        c = cfg((0.5,), (0.5,))
        rng = np.random.default_rng(7)
        mean = np.mean([sample_arrivals(c, rng)[0] for _ in range(100_000)])
        assert abs(mean - 0.5) <= 3 * np.sqrt(0.25 / 1e5)


class TestResolveServer:
    def test_full_buffer_rejects_everyone(self):
        s = ServerState(0, buffer_occupied=True)
        acc, ok, new = resolve_server(s, [1, 2], 0.0, BufferMode.UNIT, 0.3, 0.9)
        assert acc is None and not ok and new.buffer_occupied

    def test_deterministic_service(self):
        acc, ok, new = resolve_server(ServerState(0), [3], 1.0, BufferMode.UNIT, 0.7, 0.99)
        assert acc == 3 and ok and not new.buffer_occupied and new.cumulative_served == 1

    def test_uniform_tie_break(self):
        rng = np.random.default_rng(3)
        trials = 20_000
        wins = sum(resolve_server(ServerState(0), [1, 2], 0.5, BufferMode.UNIT, u, 0.5)[0] == 1 for u in rng.random(trials))
        assert abs(wins / trials - 0.5) <= 3 * np.sqrt(0.25 / trials)

    def test_no_buffer_failure_returns_packet(self):
        acc, ok, new = resolve_server(ServerState(0), [0], 0.4, BufferMode.NONE, 0.0, 0.5)
        assert acc is None and not ok and not new.buffer_occupied

    def test_no_buffer_success(self):
        acc, ok, _ = resolve_server(ServerState(0), [0, 1], 0.4, BufferMode.NONE, 0.6, 0.1)
        assert acc == 1 and ok


class TestStep:
    def test_empty_system_no_arrivals(self):
        c = cfg((0.3, 0.3), (0.5,))
        s0 = SystemState.initial(c)
        s1, out = step(s0, [None, None], draws([0.9, 0.9], [0.1], [0.1]))
        assert s1.queue_lengths.tolist() == [0, 0]
        assert out.sends == [None, None] and not s1.buffers.any()

    def test_immediate_reward_on_acceptance(self):
        c = cfg((0.0,), (0.0,))
        s0 = SystemState.initial(c, [1])
        s1, out = step(s0, [0], draws([0.5], [0.2], [0.2]))
        assert out.rewards == [1]
        assert s1.queue_lengths.tolist() == [0]
        assert s1.buffers.tolist() == [True]

    def test_single_acceptance_per_server(self):
        c = cfg((0.0, 0.0), (0.0,))
        s0 = SystemState.initial(c, [2, 2])
        s1, out = step(s0, [0, 0], draws([0.5, 0.5], [0.8], [0.5]))
        assert sorted(out.rewards) == [0, 1]
        assert sorted(s1.queue_lengths.tolist()) == [1, 2]

    def test_missing_choice(self):
        c = cfg((0.0,), (0.5,))
        with pytest.raises(ContractViolation):
            step(SystemState.initial(c, [1]), [None], draws([0.5], [0.5], [0.5]))

    def test_send_from_empty_queue(self):
        c = cfg((0.0,), (0.5,))
        with pytest.raises(ContractViolation):
            step(SystemState.initial(c), [0], draws([0.5], [0.5], [0.5]))


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 4),
    m=st.integers(1, 4),
    mode=st.sampled_from(list(BufferMode)),
    seed=st.integers(0, 2**32 - 1),
)
def test_step_conserves_packets(n, m, mode, seed):
    rng = np.random.default_rng(seed)
    c = SystemConfig(rng.random(n), rng.random(m), mode, 50, 0)
    state = SystemState.initial(c)
    arrived = served = 0
    for _ in range(50):
        arr = sample_arrivals(c, rng)
        lengths = state.queue_lengths + arr
        choice = [int(rng.integers(m)) if L > 0 else None for L in lengths]
        state, out = step(state, choice, draws(rng.random(n), rng.random(m), rng.random(m)), arr)
        arrived += int(arr.sum())
        served += int(out.service_success.sum())
        assert state.total_in_system() + served == arrived
        assert all(r in (0, 1) for r in out.rewards if r is not None)
