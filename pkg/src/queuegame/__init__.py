"""Queuing games with unit-buffer servers and no-regret bandit queues."""

from .model import BufferMode, ContractViolation, SystemConfig, SystemState, StepOutcome
from .learners import PolicyKind, PolicyState, make_policy
from .engine import Trace, run

__all__ = [
    "BufferMode",
    "ContractViolation",
    "PolicyKind",
    "PolicyState",
    "StepOutcome",
    "SystemConfig",
    "SystemState",
    "Trace",
    "make_policy",
    "run",
]
