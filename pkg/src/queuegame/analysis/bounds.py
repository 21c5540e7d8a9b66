"""Single backlogged queue spreading uniformly over k slow unit-buffer servers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..model import ContractViolation
from ..rng import AUX, substream


def lower_bound_acceptance(n: int, k: int) -> float:
    """Long-run acceptance probability 1 - (n-1)/(n+k-1).

    A queue that always has a packet picks one of k servers uniformly each
    step; every server serves its buffered packet with probability 1/n.
    """
    if n < 1 or k < 1:
        raise ContractViolation("need n >= 1 and k >= 1")
    return 1.0 - (n - 1) / (n + k - 1)


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    steps: int

    def within(self, value: float, sigmas: float = 3.0) -> bool:
        return abs(self.mean - value) <= sigmas * self.stderr


def monte_carlo_acceptance(n: int, k: int, trials: int, seed: int = 0, batches: int = 100) -> MCEstimate:
    """Simulated acceptance rate of the uniform backlogged queue over ``trials`` steps.

    Each step draws the target server and one service coin per server. A
    server's buffer always holds a packet right after it is targeted
    (either the newly accepted one or the one that caused the rejection),
    so the next packet sent there is accepted iff at least one service coin
    of that server came up in the steps from its previous targeting up to
    the current step. The standard error uses batch means.
    """
    if trials < 1:
        raise ContractViolation("trials must be >= 1")
    if n < 1 or k < 1:
        raise ContractViolation("need n >= 1 and k >= 1")
    rng = substream(seed, 0, AUX, 1000 * n + k)
    target = rng.integers(k, size=trials)
    coins = rng.random((trials, k)) < 1.0 / n
    # successes[t, j] = service successes of server j strictly before step t
    successes = np.zeros((trials + 1, k), np.int32)
    np.cumsum(coins, axis=0, out=successes[1:])

    order = np.argsort(target, kind="stable")
    prev = np.full(trials, -1, np.int64)
    same = target[order[1:]] == target[order[:-1]]
    prev[order[1:][same]] = order[:-1][same]

    t = np.arange(trials)
    first = prev < 0
    cleared = successes[t, target] - successes[np.where(first, 0, prev), target] > 0
    accepted = (first | cleared).astype(float)

    mean = float(accepted.mean())
    b = min(batches, trials)
    if b < 2:
        return MCEstimate(mean, math.inf if mean < 1 else 0.0, trials)
    means = np.array([chunk.mean() for chunk in np.array_split(accepted, b)])
    return MCEstimate(mean, float(means.std(ddof=1) / math.sqrt(b)), trials)
