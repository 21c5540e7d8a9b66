"""Best coordinated throughput of one always-backlogged queue.

States are buffer-occupancy bitmasks; each step the queue picks a target
server, earns 1 if that buffer is empty, and every occupied buffer is then
served independently with probability mu_j.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..model import BufferMode


class ConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"relative value iteration did not converge: span residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


def service_outcomes(mask: int, mu) -> list[tuple[int, float]]:
    """Distribution of the occupancy mask after one service round."""
    full = [j for j in range(len(mu)) if mask >> j & 1]
    out = []
    for served in itertools.product((False, True), repeat=len(full)):
        p = 1.0
        new = mask
        for j, ok in zip(full, served):
            p *= mu[j] if ok else 1.0 - mu[j]
            if ok:
                new &= ~(1 << j)
        if p > 0:
            out.append((new, p))
    return out


def buffer_mdp(mu) -> tuple[np.ndarray, np.ndarray]:
    """Transition tensor P[a, s, s'] and reward matrix R[s, a]."""
    m = len(mu)
    S = 1 << m
    P = np.zeros((m, S, S))
    R = np.zeros((S, m))
    for s in range(S):
        for a in range(m):
            R[s, a] = 0.0 if s >> a & 1 else 1.0
            for s2, p in service_outcomes(s | (1 << a), mu):
                P[a, s, s2] += p
    return P, R


def relative_value_iteration(P, R, tol=1e-12, max_iter=1_000_000, damping=0.5) -> tuple[float, np.ndarray]:
    """Optimal gain and bias of an average-reward MDP.

    The aperiodicity transform P' = damping * P + (1 - damping) I scales the
    gain by ``damping``; the returned gain is for the original problem.
    """
    A, S, _ = P.shape
    Pd = damping * P + (1.0 - damping) * np.eye(S)[None]
    Rd = damping * R
    h = np.zeros(S)
    span = np.inf
    for it in range(1, max_iter + 1):
        q = Rd + np.einsum("ast,t->sa", Pd, h)
        th = q.max(axis=1)
        diff = th - h
        span = diff.max() - diff.min()
        h = th - th[0]
        if span < tol:
            gain = 0.5 * (diff.max() + diff.min())
            return gain / damping, h
    raise ConvergenceError(span, max_iter)


def mdp_optimal_throughput(mu, mode=BufferMode.UNIT, tolerance: float = 1e-12, max_iter: int = 1_000_000) -> float:
    """Largest long-run acceptance rate any coordinated sending rule achieves."""
    mu = [float(x) for x in mu]
    if BufferMode(mode) is BufferMode.NONE:
        # no state: a packet counts only if served on arrival
        return max(mu)
    P, R = buffer_mdp(mu)
    gain, _ = relative_value_iteration(P, R, tolerance, max_iter)
    return float(gain)
