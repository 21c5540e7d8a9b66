"""Exact steady state of the queuing game under stationary strategies.

The chain's state is (queue lengths truncated at a cap C, buffer bitmask).
Arrivals to a full queue are dropped and their rate is reported, together
with the stationary mass at the cap, so callers can raise C until the
truncation is negligible.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..model import BufferMode, ContractViolation, SystemConfig

STATE_BUDGET = 2_000_000
DENSE_BELOW = 5_000


class ChainError(RuntimeError):
    pass


def as_strategy(strategies) -> np.ndarray:
    """Validate an (n, m) row-stochastic strategy profile."""
    S = np.atleast_2d(np.asarray(strategies, dtype=float))
    if np.any(S < 0) or np.any(np.abs(S.sum(axis=1) - 1.0) > 1e-12):
        raise ContractViolation("each strategy row must be a probability vector")
    return S


def tv_distance(p, q) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ContractViolation(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


@dataclass
class LocalOutcome:
    prob: float
    accepted: tuple[int, ...]  # 0/1 per queue
    buffers: int  # bitmask after service


def local_kernel(
    senders: tuple[int, ...],
    buffers: int,
    strategies: np.ndarray,
    mu,
    mode: BufferMode,
) -> tuple[list[LocalOutcome], np.ndarray]:
    """One step's outcomes given who sends and which buffers are full.

    Also returns ``cf[i, j]``: the probability that sender i's packet would
    be accepted had it gone to server j, with everyone else's choice and the
    buffers unchanged (0 for non-senders).
    """
    n, m = strategies.shape
    active = [i for i in range(n) if senders[i]]
    merged: dict[tuple, float] = {}
    cf = np.zeros((n, m))
    target_lists = [[j for j in range(m) if strategies[i, j] > 0] for i in active]
    for targets in itertools.product(*target_lists):
        p_choice = math.prod(strategies[i, j] for i, j in zip(active, targets))
        incoming = [[] for _ in range(m)]
        for i, j in zip(active, targets):
            incoming[j].append(i)
        for i, own in zip(active, targets):
            for j in range(m):
                others = len(incoming[j]) - (own == j)
                if mode is BufferMode.UNIT:
                    gain = 0.0 if buffers >> j & 1 else 1.0 / (others + 1)
                else:
                    gain = mu[j] / (others + 1)
                cf[i, j] += p_choice * gain
        # per-server list of (prob, accepted queue or -1, full after service)
        per_server = []
        for j in range(m):
            full = bool(buffers >> j & 1)
            opts = []
            picks = [(1.0 / len(incoming[j]), i) for i in incoming[j]] or [(1.0, -1)]
            for p_pick, i in picks:
                if mode is BufferMode.UNIT:
                    acc = -1 if full or i < 0 else i
                    holds = full or acc >= 0
                    if holds:
                        opts.append((p_pick * mu[j], acc, False))
                        opts.append((p_pick * (1 - mu[j]), acc, True))
                    else:
                        opts.append((p_pick, -1, False))
                else:
                    if i < 0:
                        opts.append((p_pick, -1, False))
                    else:
                        opts.append((p_pick * mu[j], i, False))
                        opts.append((p_pick * (1 - mu[j]), -1, False))
            per_server.append([o for o in opts if o[0] > 0])
        for combo in itertools.product(*per_server):
            p = p_choice
            acc = [0] * n
            mask = 0
            for j, (pj, a, full_after) in enumerate(combo):
                p *= pj
                if a >= 0:
                    acc[a] = 1
                if full_after:
                    mask |= 1 << j
            key = (tuple(acc), mask)
            merged[key] = merged.get(key, 0.0) + p
    return [LocalOutcome(p, a, b) for (a, b), p in merged.items() if p > 0], cf


@dataclass
class ChainSpec:
    cap: int
    n: int
    m: int
    transition: sp.csr_matrix
    expected_accept: np.ndarray  # (S, n) acceptances per step from each state
    send_prob: np.ndarray  # (S, n) probability each queue sends
    drop_rate: np.ndarray  # (S, n) probability an arrival is dropped at the cap
    at_cap: np.ndarray  # (S,) any queue at the cap
    counterfactual: np.ndarray  # (S, n, m) one-step deviation acceptance, weighted by sending

    @property
    def size(self) -> int:
        return self.transition.shape[0]


def build_chain(config: SystemConfig, strategies, cap: int) -> ChainSpec:
    strategies = as_strategy(strategies)
    n, m = config.n, config.m
    if strategies.shape != (n, m):
        raise ContractViolation(f"strategy profile must have shape {(n, m)}")
    L = (cap + 1) ** n
    S = L << m
    if S > STATE_BUDGET:
        raise ChainError(f"{S} states exceed the enumeration budget of {STATE_BUDGET}")
    lam = np.array(config.arrival_rates)
    mu = list(config.service_rates)
    mode = config.buffer_mode

    idx = np.arange(S)
    bufs = idx // L
    rem = idx % L
    N = np.empty((S, n), np.int64)
    for i in range(n):
        N[:, i] = rem % (cap + 1)
        rem //= cap + 1
    place = (cap + 1) ** np.arange(n)

    kernels = {}
    rows, cols, vals = [], [], []
    acc_exp = np.zeros((S, n))
    send = np.zeros((S, n))
    drop = np.zeros((S, n))
    cf = np.zeros((S, n, m))
    for arr in itertools.product((0, 1), repeat=n):
        p_arr = math.prod(lam[i] if a else 1 - lam[i] for i, a in enumerate(arr))
        if p_arr == 0:
            continue
        arr_v = np.array(arr)
        N2 = np.minimum(N + arr_v, cap)
        drop += p_arr * ((N == cap) & (arr_v == 1))
        senders = N2 > 0
        send += p_arr * senders
        pattern = senders @ (1 << np.arange(n)) if n else np.zeros(S, np.int64)
        for pat in np.unique(pattern):
            sel_pat = pattern == pat
            snd = tuple(int(pat >> i & 1) for i in range(n))
            for b in np.unique(bufs[sel_pat]):
                sel = np.flatnonzero(sel_pat & (bufs == b))
                key = (snd, int(b))
                if key not in kernels:
                    kernels[key] = local_kernel(snd, int(b), strategies, mu, mode)
                outcomes, cf_local = kernels[key]
                cf[sel] += p_arr * cf_local
                base = N2[sel]
                for out in outcomes:
                    a = np.array(out.accepted)
                    dest = (out.buffers * L) + (base - a) @ place
                    rows.append(sel)
                    cols.append(dest)
                    vals.append(np.full(len(sel), p_arr * out.prob))
                    acc_exp[sel] += p_arr * out.prob * a
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(S, S)
    )
    P.sum_duplicates()
    at_cap = (N == cap).any(axis=1)
    return ChainSpec(cap, n, m, P, acc_exp, send, drop, at_cap, cf)


def reachable(P: sp.csr_matrix, start: int = 0) -> np.ndarray:
    seen = np.zeros(P.shape[0], bool)
    seen[start] = True
    frontier = np.array([start])
    while len(frontier):
        nxt = np.unique(P[frontier].indices)
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        frontier = nxt
    return seen


def stationary_distribution(P: sp.csr_matrix, tol: float = 1e-12, max_iter: int = 200_000) -> np.ndarray:
    """Stationary vector of the chain restricted to states reachable from state 0.

    Small chains use a dense solve; larger ones a sparse LU solve, with power
    iteration as a fallback. Raises :class:`ChainError` when the solution is
    not a valid distribution.
    """
    keep = np.flatnonzero(reachable(P))
    Q = P[keep][:, keep].tocsr()
    k = len(keep)
    if np.abs(np.asarray(Q.sum(axis=1)).ravel() - 1.0).max() > 1e-10:
        raise ChainError("reachable set is not closed; transition rows do not sum to 1")
    pi = None
    if k < DENSE_BELOW:
        A = Q.T.toarray() - np.eye(k)
        A[-1, :] = 1.0
        rhs = np.zeros(k)
        rhs[-1] = 1.0
        try:
            pi = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise ChainError(f"singular chain: {exc}") from exc
    else:
        # pin the start state's unnormalized mass to 1 and drop its balance equation
        M = (sp.identity(k, format="csc") - Q.T.tocsc()).tocsc()
        B = M[1:, 1:]
        rhs = -M[1:, [0]].toarray().ravel()
        try:
            x = spla.splu(B).solve(rhs)
            pi = np.concatenate([[1.0], x])
            pi /= pi.sum()
        except RuntimeError:
            pi = None
        if pi is None or not np.all(np.isfinite(pi)) or np.abs(Q.T @ pi - pi).max() > 1e-10:
            pi = _power_iteration(Q, tol, max_iter)
    if np.any(pi < -1e-10) or np.abs(Q.T @ pi - pi).max() > 1e-9:
        raise ChainError("no unique stationary distribution on the reachable set")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    full = np.zeros(P.shape[0])
    full[keep] = pi
    return full


def _power_iteration(Q, tol, max_iter):
    k = Q.shape[0]
    lazy = 0.5 * (Q.T + sp.identity(k, format="csr"))
    pi = np.full(k, 1.0 / k)
    for _ in range(max_iter):
        nxt = lazy @ pi
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise ChainError(f"power iteration did not reach tolerance {tol}")


@dataclass
class PayoffReport:
    per_send: np.ndarray  # probability a sent packet is accepted
    deviation: np.ndarray  # (n, m) per-send acceptance had the packet gone to j instead
    throughput: np.ndarray  # accepted packets per step
    send_rate: np.ndarray
    drop_rate: np.ndarray
    truncation_mass: float
    cap: int

    @property
    def truncated(self) -> bool:
        return self.truncation_mass >= 1e-8


def evaluate(chain: ChainSpec, pi: np.ndarray) -> PayoffReport:
    thr = pi @ chain.expected_accept
    sends = pi @ chain.send_prob
    per_send = np.divide(thr, sends, out=np.zeros_like(thr), where=sends > 0)
    cf = np.einsum("s,sij->ij", pi, chain.counterfactual)
    deviation = np.divide(cf, sends[:, None], out=np.zeros_like(cf), where=sends[:, None] > 0)
    return PayoffReport(
        per_send=per_send,
        deviation=deviation,
        throughput=thr,
        send_rate=sends,
        drop_rate=pi @ chain.drop_rate,
        truncation_mass=float(pi[chain.at_cap].sum()),
        cap=chain.cap,
    )


def steady_state_payoffs(
    strategies,
    config: SystemConfig,
    cap: int = 64,
    truncation_tol: float = 1e-8,
    max_cap: int = 1024,
) -> PayoffReport:
    """Long-run per-queue acceptance under a fixed strategy profile.

    The cap is doubled until the mass at the cap falls below
    ``truncation_tol`` or ``max_cap`` is reached; in the latter case the
    report's ``truncated`` flag stays set.
    """
    while True:
        chain = build_chain(config, strategies, cap)
        report = evaluate(chain, stationary_distribution(chain.transition))
        if report.truncation_mass < truncation_tol or 2 * cap > max_cap:
            return report
        try:
            build_size = ((2 * cap + 1) ** config.n) << config.m
            if build_size > STATE_BUDGET:
                return report
        except OverflowError:
            return report
        cap *= 2


def simplex_grid(m: int, resolution: int) -> np.ndarray:
    """All points of the simplex with coordinates in multiples of 1/resolution."""
    pts = []
    for cuts in itertools.combinations(range(resolution + m - 1), m - 1):
        prev = -1
        parts = []
        for c in cuts:
            parts.append(c - prev - 1)
            prev = c
        parts.append(resolution + m - 2 - prev)
        pts.append(np.array(parts) / resolution)
    return np.array(pts)


def deviation_payoffs(strategies, config: SystemConfig, queue: int, cap: int = 64, grid: Optional[int] = 50):
    """Payoff of ``queue`` after switching, for good, to each pure row and grid mixture.

    Unlike the one-step deviation values in :class:`PayoffReport`, each
    candidate here re-solves the chain, so the deviator's own strategy
    shapes the buffer states it later faces.
    """
    base = as_strategy(strategies)
    m = config.m
    candidates = list(np.eye(m))
    if grid:
        candidates += list(simplex_grid(m, grid))
    out = []
    for row in candidates:
        prof = base.copy()
        prof[queue] = row
        out.append((row, steady_state_payoffs(prof, config, cap).per_send[queue]))
    return out


def best_response_gap(
    strategies,
    config: SystemConfig,
    cap: int = 64,
    queue: int = 0,
    grid: Optional[int] = 50,
    method: str = "one-step",
) -> float:
    """What ``queue`` gains from its best unilateral deviation (floored at 0).

    ``method="one-step"`` scores a deviation by the per-send acceptance it
    would get against the stationary environment (others' play and buffer
    states as they are), which is what a no-regret learner compares itself
    against; the payoff is then linear in the queue's own mixture so pure
    rows suffice, and the grid is checked anyway. ``method="resolve"``
    re-solves the chain for every pure row and grid mixture.
    """
    if method not in ("one-step", "resolve"):
        raise ValueError(f"unknown method {method!r}")
    rep = steady_state_payoffs(strategies, config, cap)
    if method == "one-step":
        return _one_step_gap(rep, queue, grid)
    best = max(p for _, p in deviation_payoffs(strategies, config, queue, cap, grid))
    return max(0.0, float(best - rep.per_send[queue]))


def _one_step_gap(rep: PayoffReport, queue: int, grid: Optional[int]) -> float:
    dev = rep.deviation[queue]
    best = dev.max()
    if grid:
        best = max(best, float((simplex_grid(len(dev), grid) @ dev).max()))
    return max(0.0, float(best - rep.per_send[queue]))


@dataclass
class EquilibriumReport:
    strategies: np.ndarray
    payoffs: np.ndarray
    gaps: np.ndarray  # one-step deviation gaps, the certification basis
    classification: str
    cap: int
    truncation_mass: float
    resolve_gaps: Optional[np.ndarray] = None

    def certified(self, eps: float = 1e-3) -> bool:
        """Every gap within ``eps`` on a chain whose truncation is negligible."""
        return bool(self.gaps.max() <= eps) and self.truncation_mass < 1e-8


def equilibrium_report(
    strategies,
    config: SystemConfig,
    cap: int = 64,
    grid: Optional[int] = 50,
    resolve: bool = False,
) -> EquilibriumReport:
    S = as_strategy(strategies)
    base = steady_state_payoffs(S, config, cap)
    gaps = np.array([_one_step_gap(base, i, grid) for i in range(config.n)])
    resolve_gaps = None
    if resolve:
        resolve_gaps = np.array([best_response_gap(S, config, cap, i, grid, "resolve") for i in range(config.n)])
    pure = bool(np.all(np.isclose(S.max(axis=1), 1.0)))
    return EquilibriumReport(
        S, base.per_send, gaps, "pure" if pure else "mixed", base.cap, base.truncation_mass, resolve_gaps
    )
