"""Deterministic per-replication, per-entity random substreams.

Every (master_seed, replication, role, entity) tuple owns an independent
numpy Generator, so a replication's draws never depend on how many other
replications ran or in what order.
"""

from __future__ import annotations

import numpy as np

from .model import StepDraws

ARRIVAL, CHOICE, PICK, SERVE, AUX = range(5)


def substream(master_seed: int, replication: int, role: int, entity: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(replication), int(role), int(entity)])
    return np.random.Generator(np.random.PCG64(ss))


class DrawSource:
    """Block-wise uniform draws for one replication of an n-queue, m-server system."""

    def __init__(self, master_seed: int, replication: int, n: int, m: int):
        self.n, self.m = n, m
        self._arrival = [substream(master_seed, replication, ARRIVAL, i) for i in range(n)]
        self._choice = [substream(master_seed, replication, CHOICE, i) for i in range(n)]
        self._pick = [substream(master_seed, replication, PICK, j) for j in range(m)]
        self._serve = [substream(master_seed, replication, SERVE, j) for j in range(m)]

    @staticmethod
    def _block(gens, size):
        out = np.empty((size, len(gens)))
        for k, g in enumerate(gens):
            out[:, k] = g.random(size)
        return out

    def block(self, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Arrays of shape (size, n), (size, n), (size, m), (size, m)."""
        return (
            self._block(self._arrival, size),
            self._block(self._choice, size),
            self._block(self._pick, size),
            self._block(self._serve, size),
        )

    def steps(self, size: int):
        """Yield ``(StepDraws, choice uniforms)`` one step at a time."""
        arr, cho, pick, serve = self.block(size)
        for t in range(size):
            yield StepDraws(arr[t], pick[t], serve[t]), cho[t]
