"""Domain types and one-step transition of the queuing game.

A step is: Bernoulli arrivals, every nonempty queue sends one packet,
each server accepts at most one packet into its unit buffer (uniform
tie-break), then attempts service on whatever its buffer holds.

All randomness is consumed as uniforms in [0, 1) so that the reference
implementation here and the compiled loop in :mod:`queuegame.engine`
produce bit-identical trajectories from the same draws.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class BufferMode(str, enum.Enum):
    UNIT = "UnitBuffer"
    NONE = "NoBuffer"


class ContractViolation(ValueError):
    """Raised when a caller breaks an operation's preconditions."""


@dataclass(frozen=True)
class SystemConfig:
    arrival_rates: tuple[float, ...]
    service_rates: tuple[float, ...]
    buffer_mode: BufferMode = BufferMode.UNIT
    horizon: int = 1
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "arrival_rates", tuple(float(x) for x in self.arrival_rates))
        object.__setattr__(self, "service_rates", tuple(float(x) for x in self.service_rates))
        object.__setattr__(self, "buffer_mode", BufferMode(self.buffer_mode))
        if self.n < 1 or self.m < 1:
            raise ContractViolation("need at least one queue and one server")
        for name, rates in (("arrival", self.arrival_rates), ("service", self.service_rates)):
            if any(not (0.0 <= r <= 1.0) for r in rates):
                raise ContractViolation(f"{name} rates must lie in [0, 1]: {rates}")
        if int(self.horizon) < 1:
            raise ContractViolation("horizon must be >= 1")
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "master_seed", int(self.master_seed) & (2**64 - 1))

    @property
    def n(self) -> int:
        return len(self.arrival_rates)

    @property
    def m(self) -> int:
        return len(self.service_rates)

    @property
    def load_ratio(self) -> float:
        return sum(self.arrival_rates) / sum(self.service_rates)

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


@dataclass
class QueueState:
    id: int
    length: int = 0
    cumulative_arrivals: int = 0
    cumulative_accepted: int = 0
    initial_length: int = 0


@dataclass
class ServerState:
    id: int
    buffer_occupied: bool = False
    cumulative_served: int = 0
    occupied_steps: int = 0


@dataclass
class SystemState:
    config: SystemConfig
    queues: list[QueueState]
    servers: list[ServerState]
    t: int = 0

    @classmethod
    def initial(cls, config: SystemConfig, initial_lengths: Optional[Sequence[int]] = None) -> "SystemState":
        lengths = [0] * config.n if initial_lengths is None else [int(x) for x in initial_lengths]
        if len(lengths) != config.n or any(x < 0 for x in lengths):
            raise ContractViolation("initial_lengths must be n nonnegative integers")
        queues = [QueueState(i, length=x, initial_length=x) for i, x in enumerate(lengths)]
        servers = [ServerState(j) for j in range(config.m)]
        return cls(config, queues, servers)

    @property
    def queue_lengths(self) -> np.ndarray:
        return np.array([q.length for q in self.queues], dtype=np.int64)

    @property
    def buffers(self) -> np.ndarray:
        return np.array([s.buffer_occupied for s in self.servers], dtype=bool)

    def total_in_system(self) -> int:
        return sum(q.length for q in self.queues) + sum(s.buffer_occupied for s in self.servers)


@dataclass
class StepOutcome:
    arrivals: np.ndarray
    sends: list[Optional[int]]
    accepted_from: list[Optional[int]]
    service_success: np.ndarray
    rewards: list[Optional[int]]
    # buffer occupancy at the start of step 2, before any acceptance
    buffers_at_send: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


@dataclass(frozen=True)
class StepDraws:
    """Uniform draws consumed by one step (choice draws are used by the learners)."""

    arrival: np.ndarray
    pick: np.ndarray
    serve: np.ndarray


def sample_arrivals(config: SystemConfig, rng) -> np.ndarray:
    """Bernoulli(lambda_i) arrival indicators for one step.

    ``rng`` is either a numpy Generator or a length-n array of uniforms.
    """
    lam = np.asarray(config.arrival_rates)
    u = rng.random(config.n) if isinstance(rng, np.random.Generator) else np.asarray(rng, dtype=float)
    return u < lam


def resolve_server(
    server: ServerState,
    incoming: Sequence[int],
    mu: float,
    mode: BufferMode,
    u_pick: float,
    u_serve: float,
) -> tuple[Optional[int], bool, ServerState]:
    """Acceptance and service at one server for one step.

    Returns ``(accepted queue or None, service succeeded, new state)``.
    In NoBuffer mode a selected packet whose service fails is returned to
    its queue, so ``accepted`` is None in that case.
    """
    incoming = sorted(incoming)
    new = replace(server)
    accepted = None
    success = False
    if mode is BufferMode.UNIT:
        if not server.buffer_occupied and incoming:
            accepted = incoming[int(u_pick * len(incoming))]
            new.buffer_occupied = True
        if new.buffer_occupied:
            new.occupied_steps += 1
            if u_serve < mu:
                success = True
                new.buffer_occupied = False
                new.cumulative_served += 1
    else:
        if incoming:
            chosen = incoming[int(u_pick * len(incoming))]
            new.occupied_steps += 1
            if u_serve < mu:
                success = True
                accepted = chosen
                new.cumulative_served += 1
    return accepted, success, new


def step(
    state: SystemState,
    send_choices: Sequence[Optional[int]],
    draws: StepDraws,
    arrivals: Optional[np.ndarray] = None,
) -> tuple[SystemState, StepOutcome]:
    """Advance the system by one step.

    ``send_choices[i]`` must be a server index exactly for queues that are
    nonempty after this step's arrivals. Pass ``arrivals`` when the caller
    already sampled them (the learners need post-arrival lengths to decide
    who sends).
    """
    cfg = state.config
    if arrivals is None:
        arrivals = sample_arrivals(cfg, draws.arrival)
    arrivals = np.asarray(arrivals, dtype=bool)
    if len(send_choices) != cfg.n:
        raise ContractViolation(f"expected {cfg.n} send choices, got {len(send_choices)}")

    queues = [replace(q) for q in state.queues]
    for q, a in zip(queues, arrivals):
        if a:
            q.length += 1
            q.cumulative_arrivals += 1

    incoming: list[list[int]] = [[] for _ in range(cfg.m)]
    for i, (q, j) in enumerate(zip(queues, send_choices)):
        if q.length >= 1 and j is None:
            raise ContractViolation(f"queue {i} is nonempty but has no send choice")
        if q.length == 0 and j is not None:
            raise ContractViolation(f"queue {i} is empty but a send to server {j} was given")
        if j is not None:
            if not 0 <= j < cfg.m:
                raise ContractViolation(f"server index {j} out of range")
            incoming[j].append(i)

    buffers_at_send = np.array([s.buffer_occupied for s in state.servers], dtype=bool)
    servers = []
    accepted_from: list[Optional[int]] = []
    success = np.zeros(cfg.m, dtype=bool)
    for j, s in enumerate(state.servers):
        acc, ok, new = resolve_server(
            s, incoming[j], cfg.service_rates[j], cfg.buffer_mode, draws.pick[j], draws.serve[j]
        )
        servers.append(new)
        accepted_from.append(acc)
        success[j] = ok

    rewards: list[Optional[int]] = [None if j is None else 0 for j in send_choices]
    for acc in accepted_from:
        if acc is not None:
            rewards[acc] = 1
            queues[acc].length -= 1
            queues[acc].cumulative_accepted += 1

    outcome = StepOutcome(
        arrivals=arrivals,
        sends=list(send_choices),
        accepted_from=accepted_from,
        service_success=success,
        rewards=rewards,
        buffers_at_send=buffers_at_send,
    )
    return SystemState(cfg, queues, servers, state.t + 1), outcome
