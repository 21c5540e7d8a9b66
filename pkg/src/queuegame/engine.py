"""Simulation loop and trace container.

:func:`run` drives a compiled loop over pre-drawn uniform blocks.
:func:`run_reference` is the slow path built from :func:`queuegame.model.step`
and the learner functions; on identical seeds both produce the same trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

import numba
import numpy as np

from .learners import (
    KIND_CODE,
    PolicyKind,
    PolicyState,
    RegretLedger,
    choose_arm,
    counterfactual_rewards,
    exp3_update,
    exp3p_update,
    mix_distribution,
    policy_distribution,
    policy_update,
)
from .model import BufferMode, ContractViolation, SystemConfig, SystemState, sample_arrivals, step
from .rng import DrawSource

CHUNK = 1 << 15


@dataclass
class StepRecord:
    """Per-step arrays (only kept when ``record=True``)."""

    arrivals: np.ndarray  # (T, n) int8
    queue_lengths: np.ndarray  # (T, n) int64, after the step
    sends: np.ndarray  # (T, n) int8, -1 when the queue did not send
    rewards: np.ndarray  # (T, n) int8
    occupied: np.ndarray  # (T, m) int8, buffer held a packet at service time
    served: np.ndarray  # (T, m) int8
    counterfactual: np.ndarray  # (T, n, m) float64

    def __len__(self):
        return len(self.arrivals)


@dataclass
class Trace:
    config: SystemConfig
    replication: int
    initial_lengths: np.ndarray
    checkpoint_times: np.ndarray  # (K,)
    queue_lengths: np.ndarray  # (K, n)
    cum_arrivals: np.ndarray  # (K, n)
    cum_served: np.ndarray  # (K, m)
    play_hist: np.ndarray  # (K, n, m) sends per server since previous checkpoint
    play_probs: np.ndarray  # (K, n, m) policy distribution at each checkpoint
    final_buffers: np.ndarray
    arrivals: np.ndarray  # (n,) totals
    accepted: np.ndarray  # (n,)
    sends: np.ndarray  # (n,)
    served: np.ndarray  # (m,)
    occupied_steps: np.ndarray  # (m,)
    ledgers: list[RegretLedger]
    policies: list[PolicyState]
    steps: Optional[StepRecord] = None

    @property
    def final_lengths(self) -> np.ndarray:
        return self.queue_lengths[-1]

    @property
    def horizon(self) -> int:
        return int(self.checkpoint_times[-1])

    def in_queues(self) -> int:
        return int(self.final_lengths.sum())

    def in_buffers(self) -> int:
        return int(self.final_buffers.sum())

    def total_served(self) -> int:
        return int(self.served.sum())


def checkpoint_times(horizon: int, stride: Optional[int]) -> np.ndarray:
    if stride is None:
        stride = max(1, horizon // 1000)
    if stride < 1:
        raise ContractViolation("checkpoint stride must be >= 1")
    times = list(range(stride, horizon + 1, stride))
    if not times or times[-1] != horizon:
        times.append(horizon)
    return np.array(times, dtype=np.int64)


@numba.njit(cache=True)
def _simulate_block(
    lam, mu, unit, kinds, gammas, rates, alphas, horizons, fixed,
    weights, qlen, buf,
    cum_arr, cum_acc, cum_served, occ_steps, n_sends, hist,
    cf_cum, realized,
    u_arr, u_cho, u_pick, u_serve,
    t0, ck_times, ck_idx,
    ck_len, ck_arr, ck_served, ck_hist, ck_probs,
    record, r_arr, r_len, r_send, r_rew, r_occ, r_srv, r_cf,
):
    n = lam.shape[0]
    m = mu.shape[0]
    P = np.empty((n, m))
    send = np.empty(n, np.int64)
    prob = np.empty(n)
    counts = np.empty(m, np.int64)
    buf_start = np.empty(m, np.bool_)
    accepted = np.empty(m, np.int64)
    reward = np.empty(n, np.int64)
    for s in range(u_arr.shape[0]):
        t = t0 + s
        for i in range(n):
            if u_arr[s, i] < lam[i]:
                qlen[i] += 1
                cum_arr[i] += 1
                if record:
                    r_arr[t, i] = 1
        for j in range(m):
            counts[j] = 0
        for i in range(n):
            if qlen[i] > 0:
                k = kinds[i]
                if k == 2:
                    for j in range(m):
                        P[i, j] = 1.0 / m
                elif k == 3:
                    for j in range(m):
                        P[i, j] = fixed[i, j]
                else:
                    mix_distribution(weights[i], gammas[i], P[i])
                j = choose_arm(P[i], u_cho[s, i])
                send[i] = j
                prob[i] = P[i, j]
                counts[j] += 1
                n_sends[i] += 1
                hist[i, j] += 1
            else:
                send[i] = -1
        for j in range(m):
            buf_start[j] = buf[j]
            accepted[j] = -1
            c = counts[j]
            sel = -1
            if c > 0:
                r = int(u_pick[s, j] * c)
                for i in range(n):
                    if send[i] == j:
                        if r == 0:
                            sel = i
                            break
                        r -= 1
            if unit:
                if not buf[j] and sel >= 0:
                    accepted[j] = sel
                    buf[j] = True
                if buf[j]:
                    occ_steps[j] += 1
                    if record:
                        r_occ[t, j] = 1
                    if u_serve[s, j] < mu[j]:
                        buf[j] = False
                        cum_served[j] += 1
                        if record:
                            r_srv[t, j] = 1
            else:
                if sel >= 0:
                    occ_steps[j] += 1
                    if record:
                        r_occ[t, j] = 1
                    if u_serve[s, j] < mu[j]:
                        accepted[j] = sel
                        cum_served[j] += 1
                        if record:
                            r_srv[t, j] = 1
        for i in range(n):
            reward[i] = 0
        for j in range(m):
            a = accepted[j]
            if a >= 0:
                reward[a] = 1
                qlen[a] -= 1
                cum_acc[a] += 1
        for i in range(n):
            j = send[i]
            if record:
                r_send[t, i] = j
                r_len[t, i] = qlen[i]
            if j < 0:
                continue
            if record:
                r_rew[t, i] = reward[i]
            for jj in range(m):
                if jj == j:
                    cf = float(reward[i])
                elif unit:
                    cf = 0.0 if buf_start[jj] else 1.0 / (counts[jj] + 1.0)
                else:
                    cf = mu[jj] / (counts[jj] + 1.0)
                cf_cum[i, jj] += cf
                if record:
                    r_cf[t, i, jj] = cf
            realized[i] += reward[i]
            k = kinds[i]
            if k == 0:
                exp3_update(weights[i], j, float(reward[i]), prob[i], rates[i])
            elif k == 1:
                exp3p_update(weights[i], P[i], j, float(reward[i]), gammas[i], alphas[i], horizons[i])
        if ck_idx < ck_times.shape[0] and t + 1 == ck_times[ck_idx]:
            for i in range(n):
                ck_len[ck_idx, i] = qlen[i]
                ck_arr[ck_idx, i] = cum_arr[i]
                k = kinds[i]
                if k == 2:
                    for j in range(m):
                        ck_probs[ck_idx, i, j] = 1.0 / m
                elif k == 3:
                    for j in range(m):
                        ck_probs[ck_idx, i, j] = fixed[i, j]
                else:
                    mix_distribution(weights[i], gammas[i], ck_probs[ck_idx, i])
                for j in range(m):
                    ck_hist[ck_idx, i, j] = hist[i, j]
                    hist[i, j] = 0
            for j in range(m):
                ck_served[ck_idx, j] = cum_served[j]
            ck_idx += 1
    return ck_idx


def _check_policies(config: SystemConfig, policies: Sequence[PolicyState]):
    if len(policies) != config.n:
        raise ContractViolation(f"need {config.n} policies, got {len(policies)}")
    for p in policies:
        if p.m != config.m:
            raise ContractViolation("policy arm count must equal the number of servers")


def _empty_record(T: int, n: int, m: int) -> StepRecord:
    return StepRecord(
        arrivals=np.zeros((T, n), np.int8),
        queue_lengths=np.zeros((T, n), np.int64),
        sends=np.full((T, n), -1, np.int8),
        rewards=np.zeros((T, n), np.int8),
        occupied=np.zeros((T, m), np.int8),
        served=np.zeros((T, m), np.int8),
        counterfactual=np.zeros((T, n, m)),
    )


def run(
    config: SystemConfig,
    policies: Sequence[PolicyState],
    checkpoint_stride: Optional[int] = None,
    replication: int = 0,
    record: bool = False,
    initial_lengths: Optional[Sequence[int]] = None,
) -> Trace:
    """Simulate ``config.horizon`` steps with each queue learning from its own rewards."""
    _check_policies(config, policies)
    n, m, T = config.n, config.m, config.horizon
    init = SystemState.initial(config, initial_lengths).queue_lengths
    ck_times = checkpoint_times(T, checkpoint_stride)
    K = len(ck_times)

    lam = np.array(config.arrival_rates)
    mu = np.array(config.service_rates)
    kinds = np.array([KIND_CODE[p.kind] for p in policies], np.int64)
    gammas = np.array([p.gamma for p in policies])
    rates = np.array([p.rate for p in policies])
    alphas = np.array([p.exp3p_alpha if p.kind is PolicyKind.EXP3P else 0.0 for p in policies])
    horizons = np.array([float(p.horizon) for p in policies])
    fixed = np.array([p.fixed_probs if p.kind is PolicyKind.FIXED else np.zeros(m) for p in policies])
    weights = np.array([p.weights for p in policies], dtype=float)

    qlen = init.copy()
    buf = np.zeros(m, np.bool_)
    cum_arr = np.zeros(n, np.int64)
    cum_acc = np.zeros(n, np.int64)
    cum_served = np.zeros(m, np.int64)
    occ = np.zeros(m, np.int64)
    n_sends = np.zeros(n, np.int64)
    hist = np.zeros((n, m), np.int64)
    cf_cum = np.zeros((n, m))
    realized = np.zeros(n)
    ck_len = np.zeros((K, n), np.int64)
    ck_arr = np.zeros((K, n), np.int64)
    ck_served = np.zeros((K, m), np.int64)
    ck_hist = np.zeros((K, n, m), np.int64)
    ck_probs = np.zeros((K, n, m))
    rec = _empty_record(T if record else 0, n, m)

    draws = DrawSource(config.master_seed, replication, n, m)
    ck_idx = 0
    for t0 in range(0, T, CHUNK):
        u_arr, u_cho, u_pick, u_serve = draws.block(min(CHUNK, T - t0))
        ck_idx = _simulate_block(
            lam, mu, config.buffer_mode is BufferMode.UNIT, kinds, gammas, rates, alphas, horizons, fixed,
            weights, qlen, buf,
            cum_arr, cum_acc, cum_served, occ, n_sends, hist,
            cf_cum, realized,
            u_arr, u_cho, u_pick, u_serve,
            t0, ck_times, ck_idx,
            ck_len, ck_arr, ck_served, ck_hist, ck_probs,
            record, rec.arrivals, rec.queue_lengths, rec.sends, rec.rewards, rec.occupied, rec.served,
            rec.counterfactual,
        )

    final_policies = [
        replace(p, weights=weights[i].copy(), plays=p.plays + int(n_sends[i])) for i, p in enumerate(policies)
    ]
    ledgers = [RegretLedger(cf_cum[i].copy(), float(realized[i]), int(n_sends[i])) for i in range(n)]
    return Trace(
        config=config,
        replication=replication,
        initial_lengths=init,
        checkpoint_times=ck_times,
        queue_lengths=ck_len,
        cum_arrivals=ck_arr,
        cum_served=ck_served,
        play_hist=ck_hist,
        play_probs=ck_probs,
        final_buffers=buf,
        arrivals=cum_arr,
        accepted=cum_acc,
        sends=n_sends,
        served=cum_served,
        occupied_steps=occ,
        ledgers=ledgers,
        policies=final_policies,
        steps=rec if record else None,
    )


def run_reference(
    config: SystemConfig,
    policies: Sequence[PolicyState],
    checkpoint_stride: Optional[int] = None,
    replication: int = 0,
    initial_lengths: Optional[Sequence[int]] = None,
) -> Trace:
    """Step-by-step simulation through the model and learner APIs (always records)."""
    _check_policies(config, policies)
    n, m, T = config.n, config.m, config.horizon
    state = SystemState.initial(config, initial_lengths)
    init = state.queue_lengths
    policies = list(policies)
    ledgers = [RegretLedger.empty(m) for _ in range(n)]
    ck_times = checkpoint_times(T, checkpoint_stride)
    rows: dict[str, list] = {k: [] for k in ("len", "arr", "served", "hist", "probs")}
    hist = np.zeros((n, m), np.int64)
    rec = _empty_record(T, n, m)

    for t, (draws, u_choice) in enumerate(DrawSource(config.master_seed, replication, n, m).steps(T)):
        arrivals = sample_arrivals(config, draws.arrival)
        sends, probs = [], []
        for i, q in enumerate(state.queues):
            if q.length + arrivals[i] >= 1:
                p = policy_distribution(policies[i])
                j = int(choose_arm(p, u_choice[i]))
                sends.append(j)
                probs.append(p[j])
                hist[i, j] += 1
            else:
                sends.append(None)
                probs.append(None)
        prev = state
        state, out = step(state, sends, draws, arrivals=arrivals)
        rec.arrivals[t] = out.arrivals
        rec.queue_lengths[t] = state.queue_lengths
        rec.occupied[t] = [a.occupied_steps > b.occupied_steps for a, b in zip(state.servers, prev.servers)]
        rec.served[t] = out.service_success
        for i, j in enumerate(sends):
            if j is None:
                continue
            rec.sends[t, i] = j
            rec.rewards[t, i] = out.rewards[i]
            cf = counterfactual_rewards(i, out, config.service_rates, config.buffer_mode)
            rec.counterfactual[t, i] = cf
            led = ledgers[i]
            ledgers[i] = RegretLedger(led.counterfactual + cf, led.realized + out.rewards[i], led.steps_with_packet + 1)
            policies[i] = policy_update(policies[i], j, out.rewards[i], probs[i])
        if t + 1 in ck_times:
            rows["len"].append(state.queue_lengths)
            rows["arr"].append([q.cumulative_arrivals for q in state.queues])
            rows["served"].append([s.cumulative_served for s in state.servers])
            rows["hist"].append(hist.copy())
            rows["probs"].append([policy_distribution(p) for p in policies])
            hist[:] = 0

    return Trace(
        config=config,
        replication=replication,
        initial_lengths=init,
        checkpoint_times=ck_times,
        queue_lengths=np.array(rows["len"], np.int64),
        cum_arrivals=np.array(rows["arr"], np.int64),
        cum_served=np.array(rows["served"], np.int64),
        play_hist=np.array(rows["hist"], np.int64),
        play_probs=np.array(rows["probs"]),
        final_buffers=state.buffers,
        arrivals=np.array([q.cumulative_arrivals for q in state.queues], np.int64),
        accepted=np.array([q.cumulative_accepted for q in state.queues], np.int64),
        sends=np.array([led.steps_with_packet for led in ledgers], np.int64),
        served=np.array([s.cumulative_served for s in state.servers], np.int64),
        occupied_steps=np.array([s.occupied_steps for s in state.servers], np.int64),
        ledgers=ledgers,
        policies=policies,
        steps=rec,
    )


_TRACE_ARRAYS = (
    "initial_lengths", "checkpoint_times", "queue_lengths", "cum_arrivals", "cum_served", "play_hist",
    "play_probs", "final_buffers", "arrivals", "accepted", "sends", "served", "occupied_steps",
)


def save_trace(trace: Trace, path) -> None:
    """Store a trace as ``.npz``; policies and ledgers are not kept."""
    cfg = trace.config
    meta = json.dumps(
        {
            "arrival_rates": cfg.arrival_rates,
            "service_rates": cfg.service_rates,
            "buffer_mode": cfg.buffer_mode.value,
            "horizon": cfg.horizon,
            "master_seed": cfg.master_seed,
            "replication": trace.replication,
        }
    )
    arrays = {k: getattr(trace, k) for k in _TRACE_ARRAYS}
    if trace.steps is not None:
        arrays.update({f"step_{f.name}": getattr(trace.steps, f.name) for f in fields(StepRecord)})
    np.savez_compressed(path, meta=np.array(meta), **arrays)


def load_trace(path) -> Trace:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        rep = meta.pop("replication")
        arrays = {k: z[k] for k in _TRACE_ARRAYS}
        steps = None
        if "step_arrivals" in z:
            steps = StepRecord(**{f.name: z[f"step_{f.name}"] for f in fields(StepRecord)})
    return Trace(config=SystemConfig(**meta), replication=rep, ledgers=[], policies=[], steps=steps, **arrays)
