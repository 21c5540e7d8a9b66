"""Per-queue bandit policies over the servers and regret bookkeeping.

The numeric kernels (mixing, arm sampling, weight updates) are numba
functions so the compiled simulation loop and the pure-Python reference
path share exactly the same floating point arithmetic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numba
import numpy as np

from .model import BufferMode, ContractViolation, StepOutcome

EXPONENT_CAP = 50.0
RENORMALIZE_ABOVE = 1e100


class PolicyKind(str, enum.Enum):
    EXP3 = "EXP3"
    EXP3P = "EXP3P"
    UNIFORM = "UniformRandom"
    FIXED = "FixedMix"


# integer codes used inside the compiled loop
KIND_CODE = {PolicyKind.EXP3: 0, PolicyKind.EXP3P: 1, PolicyKind.UNIFORM: 2, PolicyKind.FIXED: 3}


@dataclass
class PolicyState:
    kind: PolicyKind
    weights: np.ndarray
    gamma: float = 0.0
    fixed_probs: Optional[np.ndarray] = None
    plays: int = 0
    eta_confidence: float = 0.05
    horizon: int = 1
    # None means the coupled EXP3 rate gamma / m
    learning_rate: Optional[float] = None

    def __post_init__(self):
        self.kind = PolicyKind(self.kind)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise ContractViolation("weights must be finite and positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractViolation("gamma must lie in [0, 1]")
        if self.kind is PolicyKind.FIXED:
            if self.fixed_probs is None:
                raise ContractViolation("FixedMix needs fixed_probs")
            self.fixed_probs = np.asarray(self.fixed_probs, dtype=float)
            if len(self.fixed_probs) != self.m or np.any(self.fixed_probs < 0):
                raise ContractViolation("fixed_probs must be a nonnegative vector of length m")
            if abs(self.fixed_probs.sum() - 1.0) > 1e-12:
                raise ContractViolation("fixed_probs must sum to 1")

    @property
    def m(self) -> int:
        return len(self.weights)

    @property
    def rate(self) -> float:
        return self.gamma / self.m if self.learning_rate is None else self.learning_rate

    @property
    def exp3p_alpha(self) -> float:
        return 2.0 * math.sqrt(math.log(self.m * self.horizon / self.eta_confidence))


def make_policy(kind, m: int, horizon: int = 1, gamma: Optional[float] = None, **kw) -> PolicyState:
    """Fresh policy with all-ones weights; gamma defaults to 1/sqrt(horizon)."""
    if gamma is None:
        gamma = 1.0 / math.sqrt(horizon)
    return PolicyState(PolicyKind(kind), np.ones(m), gamma=gamma, horizon=horizon, **kw)


@numba.njit(cache=True)
def mix_distribution(weights, gamma, out):
    m = weights.shape[0]
    total = 0.0
    for j in range(m):
        total += weights[j]
    for j in range(m):
        out[j] = (1.0 - gamma) * weights[j] / total + gamma / m
    return out


@numba.njit(cache=True)
def choose_arm(p, u):
    """Inverse-CDF sample: first j with u < p_0 + ... + p_j."""
    acc = 0.0
    m = p.shape[0]
    for j in range(m):
        acc += p[j]
        if u < acc:
            return j
    return m - 1


@numba.njit(cache=True)
def exp3_update(weights, arm, reward, prob, rate):
    x = rate * reward / prob
    if x > EXPONENT_CAP:
        x = EXPONENT_CAP
    if x != 0.0:
        weights[arm] *= math.exp(x)
    _renormalize(weights)


@numba.njit(cache=True)
def exp3p_update(weights, p, arm, reward, gamma, alpha, horizon):
    m = weights.shape[0]
    scale = gamma / (3.0 * m)
    root = math.sqrt(m * horizon)
    for j in range(m):
        xhat = reward / p[j] if j == arm else 0.0
        x = scale * (xhat + alpha / (p[j] * root))
        if x > EXPONENT_CAP:
            x = EXPONENT_CAP
        weights[j] *= math.exp(x)
    _renormalize(weights)


@numba.njit(cache=True)
def _renormalize(weights):
    total = 0.0
    big = 0.0
    for j in range(weights.shape[0]):
        total += weights[j]
        if weights[j] > big:
            big = weights[j]
    if total > RENORMALIZE_ABOVE:
        for j in range(weights.shape[0]):
            weights[j] = weights[j] / big


def policy_distribution(policy: PolicyState) -> np.ndarray:
    if policy.kind is PolicyKind.UNIFORM:
        return np.full(policy.m, 1.0 / policy.m)
    if policy.kind is PolicyKind.FIXED:
        return policy.fixed_probs.copy()
    return mix_distribution(policy.weights, policy.gamma, np.empty(policy.m))


def policy_update(policy: PolicyState, arm: int, reward: int, prob_played: float) -> PolicyState:
    """Return the policy after observing ``reward`` for ``arm``."""
    if not prob_played > 0:
        raise ContractViolation("prob_played must be positive")
    if reward not in (0, 1):
        raise ContractViolation("reward must be 0 or 1")
    new = replace(policy, weights=policy.weights.copy(), plays=policy.plays + 1)
    if policy.kind is PolicyKind.EXP3:
        exp3_update(new.weights, arm, float(reward), float(prob_played), policy.rate)
    elif policy.kind is PolicyKind.EXP3P:
        p = policy_distribution(policy)
        exp3p_update(new.weights, p, arm, float(reward), policy.gamma, policy.exp3p_alpha, float(policy.horizon))
    return new


@dataclass
class RegretLedger:
    counterfactual: np.ndarray
    realized: float = 0.0
    steps_with_packet: int = 0

    @classmethod
    def empty(cls, m: int) -> "RegretLedger":
        return cls(np.zeros(m))

    @property
    def estimated_regret(self) -> float:
        return float(self.counterfactual.max() - self.realized)


def counterfactual_rewards(
    queue: int,
    outcome: StepOutcome,
    service_rates,
    mode: BufferMode = BufferMode.UNIT,
) -> np.ndarray:
    """Reward queue ``queue`` would have had at each server, others' play fixed.

    The played arm gets the realized reward. An unplayed arm j gets 0 if its
    buffer was full, else 1/(c_j + 1) with c_j the number of other queues
    that sent to j (times mu_j without buffers, where reward needs service).
    """
    m = len(outcome.buffers_at_send)
    played = outcome.sends[queue]
    contenders = np.zeros(m)
    for i, j in enumerate(outcome.sends):
        if j is not None and i != queue:
            contenders[j] += 1
    if mode is BufferMode.UNIT:
        cf = np.where(outcome.buffers_at_send, 0.0, 1.0 / (contenders + 1.0))
    else:
        cf = np.asarray(service_rates, dtype=float) / (contenders + 1.0)
    cf[played] = outcome.rewards[queue]
    return cf


def record_counterfactuals(
    ledger: RegretLedger,
    outcome: StepOutcome,
    queue: int,
    service_rates=None,
    mode: BufferMode = BufferMode.UNIT,
) -> RegretLedger:
    if outcome.sends[queue] is None:
        raise ContractViolation(f"queue {queue} did not send this step")
    if service_rates is None:
        service_rates = np.ones(len(outcome.buffers_at_send))
    cf = counterfactual_rewards(queue, outcome, service_rates, mode)
    return RegretLedger(
        ledger.counterfactual + cf,
        ledger.realized + outcome.rewards[queue],
        ledger.steps_with_packet + 1,
    )
