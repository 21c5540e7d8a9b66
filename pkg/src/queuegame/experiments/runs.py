"""Experiment drivers: symmetric sweep, random ensembles, buffer comparison,
learning dynamics, analytic oracles, and single traced runs.

Every driver returns plain row dicts. Replication ``k`` of every sweep point
uses the same random substreams (common random numbers), so rows depend only
on (spec, point, replication) and never on execution order.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .. import diagnostics
from ..analysis import bounds, chain, mdp
from ..engine import Trace, run
from ..learners import make_policy
from ..model import BufferMode, SystemConfig
from ..rng import AUX, substream
from .config import ExperimentKind, ExperimentSpec, spec_hash

SWEEP_SERVICE = (0.8, 0.2, 0.2)
CLEARING_ARRIVALS = (0.6, 0.3, 0.3, 0.3)
CLEARING_SERVICE = (0.8, 0.4, 0.4, 0.2, 0.2)
ASYMMETRIC_GAME = ((1 / 3, 1 / 6), (2 / 3, 2 / 9, 1 / 9))
SYMMETRIC_GAME = ((0.25, 0.25), (2 / 3, 2 / 3))

DEFAULT_RATIOS = [round(0.05 * k, 2) for k in range(1, 21)]

# full-size overrides per experiment kind
FULL_SCALE = {
    ExperimentKind.SWEEP: dict(horizon=50_000, replications=200),
    ExperimentKind.ENSEMBLE: dict(horizon=50_000, ensemble_size=200),
    ExperimentKind.BUFFERS: dict(horizon=50_000, replications=300),
    ExperimentKind.DYNAMICS: dict(horizons=[1_000, 4_000, 16_000, 64_000, 256_000], replications=200),
}
FULL_SCALE_CLEARING = dict(horizon=10_000, replications=1_000)


def full_scale(spec: ExperimentSpec) -> ExperimentSpec:
    if spec.kind is ExperimentKind.BUFFERS and spec.variant == "clearing":
        return spec.replace(**FULL_SCALE_CLEARING)
    return spec.replace(**FULL_SCALE.get(spec.kind, {}))


def policies_for(spec: ExperimentSpec, config: SystemConfig):
    return [
        make_policy(spec.policy, config.m, config.horizon, gamma=spec.gamma, learning_rate=spec.learning_rate)
        for _ in range(config.n)
    ]


@dataclass(frozen=True)
class Job:
    point: int
    replication: int
    config: SystemConfig
    spec: ExperimentSpec


def _simulate(job: Job) -> Trace:
    return run(job.config, policies_for(job.spec, job.config), replication=job.replication)


def _map(fn: Callable, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [fn(j) for j in jobs]


def _provenance(spec: ExperimentSpec, replication: int) -> dict:
    return {"replication": replication, "seed": spec.master_seed, "config_hash": spec_hash(spec)}


def rescale_arrivals(arrivals, services, ratio: float) -> np.ndarray:
    """Scale arrival rates so that sum(arrivals) / sum(services) == ratio."""
    lam = np.asarray(arrivals, dtype=float)
    return lam * (ratio * float(np.sum(services)) / float(lam.sum()))


@dataclass
class EnsembleInstance:
    arrival_rates: np.ndarray
    service_rates: np.ndarray
    scale: float

    @property
    def ratio(self) -> float:
        return float(self.arrival_rates.sum() / self.service_rates.sum())


def sample_base_instances(master_seed: int, count: int, n: int, m: int, max_ratio: float = 1.0):
    """Uniform(0, 1) base rates; draws that would push some lambda_i above 1 at ``max_ratio`` are redrawn."""
    rng = substream(master_seed, 0, AUX, 0)
    out = []
    while len(out) < count:
        lam = rng.uniform(0, 1, n)
        mu = rng.uniform(0, 1, m)
        if rescale_arrivals(lam, mu, max_ratio).max() <= 1.0:
            out.append((lam, mu))
    return out


def ensemble_instance(base, ratio: float) -> EnsembleInstance:
    lam, mu = base
    scaled = rescale_arrivals(lam, mu, ratio)
    return EnsembleInstance(scaled, np.asarray(mu), float(scaled[0] / lam[0]))


def _row_from_trace(trace: Trace, spec: ExperimentSpec, **extra) -> dict:
    row = dict(extra)
    row.update(_provenance(spec, trace.replication))
    row["final_total_queue"] = trace.in_queues()
    row["normalized_buildup"] = diagnostics.buildup(trace)
    row["clearing_rate"] = diagnostics.clearing_rate(trace)
    row["max_queue"] = int(trace.final_lengths.max())
    return row


def symmetric_sweep(spec: ExperimentSpec) -> list[dict]:
    """Equal arrival rates on fixed servers, swept over the load ratio."""
    mu = tuple(spec.service_rates) or SWEEP_SERVICE
    n = spec.n_queues or 3
    ratios = spec.ratios or DEFAULT_RATIOS
    jobs = []
    for p, r in enumerate(ratios):
        lam = r * sum(mu) / n
        cfg = SystemConfig((lam,) * n, mu, spec.buffer_mode, spec.horizon, spec.master_seed)
        jobs += [Job(p, k, cfg, spec) for k in range(spec.replications)]
    traces = _map(_simulate, jobs, spec.workers)
    return [
        _row_from_trace(tr, spec, ratio=ratios[j.point], arrival_rate=j.config.arrival_rates[0])
        for j, tr in zip(jobs, traces)
    ]


def random_ensemble(spec: ExperimentSpec) -> list[dict]:
    """Random (lambda, mu) instances rescaled to each target load ratio; one run per instance and ratio."""
    n, m = spec.n_queues or 5, spec.n_servers or 6
    ratios = spec.ratios or DEFAULT_RATIOS
    bases = sample_base_instances(spec.master_seed, spec.ensemble_size, n, m, max(ratios))
    jobs = []
    for p, r in enumerate(ratios):
        for k, base in enumerate(bases):
            inst = ensemble_instance(base, r)
            cfg = SystemConfig(inst.arrival_rates, inst.service_rates, spec.buffer_mode, spec.horizon, spec.master_seed)
            jobs.append(Job(p, k, cfg, spec))
    traces = _map(_simulate, jobs, spec.workers)
    return [
        _row_from_trace(tr, spec, ratio=ratios[j.point], instance=j.replication, realized_ratio=j.config.load_ratio)
        for j, tr in zip(jobs, traces)
    ]


def buffer_compare(spec: ExperimentSpec) -> list[dict]:
    """Identical instances with and without server buffers.

    ``variant="exceedance"``: random instances per ratio, flag runs in which
    some queue ends above sqrt(T). ``variant="clearing"`` (default): one
    fixed system, clearing rate per replication.
    """
    modes = (BufferMode.UNIT, BufferMode.NONE)
    jobs = []
    if spec.variant == "exceedance":
        n, m = spec.n_queues or 5, spec.n_servers or 6
        ratios = spec.ratios or DEFAULT_RATIOS
        bases = sample_base_instances(spec.master_seed, spec.replications, n, m, max(ratios))
        for p, r in enumerate(ratios):
            for k, base in enumerate(bases):
                inst = ensemble_instance(base, r)
                for mode in modes:
                    cfg = SystemConfig(inst.arrival_rates, inst.service_rates, mode, spec.horizon, spec.master_seed)
                    jobs.append(Job(p, k, cfg, spec))
    else:
        lam = tuple(spec.arrival_rates) or CLEARING_ARRIVALS
        mu = tuple(spec.service_rates) or CLEARING_SERVICE
        ratios = [sum(lam) / sum(mu)]
        for k in range(spec.replications):
            for mode in modes:
                jobs.append(Job(0, k, SystemConfig(lam, mu, mode, spec.horizon, spec.master_seed), spec))
    traces = _map(_simulate, jobs, spec.workers)
    rows = []
    threshold = math.sqrt(spec.horizon)
    for j, tr in zip(jobs, traces):
        row = _row_from_trace(tr, spec, ratio=ratios[j.point], buffer_mode=j.config.buffer_mode.value)
        row["exceeds_sqrt_T"] = int(tr.final_lengths.max() > threshold)
        rows.append(row)
    return rows


def pure_profiles(n: int, m: int) -> list[np.ndarray]:
    return [np.eye(m)[list(c)] for c in itertools.product(range(m), repeat=n)]


def overloads_a_server(profile: np.ndarray, config: SystemConfig) -> bool:
    """A pure profile routing at least mu_j of arrivals to server j has no stationary regime."""
    load = np.asarray(config.arrival_rates) @ profile
    return bool(np.any(load >= np.asarray(config.service_rates)))


def certified_pure_equilibria(config: SystemConfig, eps: float = 1e-3, cap: int = 64, grid: Optional[int] = 50):
    """All pure profiles whose one-step best-response gap is at most ``eps``."""
    out = []
    for prof in pure_profiles(config.n, config.m):
        if overloads_a_server(prof, config):
            continue
        rep = chain.equilibrium_report(prof, config, cap, grid)
        if rep.certified(eps):
            out.append(rep)
    return out


def profile_distance(probs: np.ndarray, profile: np.ndarray) -> float:
    """Largest per-queue total variation distance between two strategy profiles."""
    return max(chain.tv_distance(p, q) for p, q in zip(probs, profile))


@dataclass
class DynamicsResult:
    rows: list[dict]
    series: list[dict]
    equilibria: list


def _dynamics_job(job: Job) -> Trace:
    stride = job.spec.checkpoint_stride or max(1, job.config.horizon // 200)
    return run(job.config, policies_for(job.spec, job.config), checkpoint_stride=stride, replication=job.replication)


def dynamics_study(spec: ExperimentSpec, eps: float = 1e-3) -> DynamicsResult:
    """Play distributions over time and their distance to the nearest certified pure equilibrium."""
    lam = tuple(spec.arrival_rates) or SYMMETRIC_GAME[0]
    mu = tuple(spec.service_rates) or SYMMETRIC_GAME[1]
    horizons = spec.horizons or [spec.horizon]
    base_cfg = SystemConfig(lam, mu, spec.buffer_mode, max(horizons), spec.master_seed)
    equilibria = certified_pure_equilibria(base_cfg, eps)
    certified = bool(equilibria)
    targets = [e.strategies for e in equilibria] or pure_profiles(base_cfg.n, base_cfg.m)

    jobs = [
        Job(p, k, base_cfg.with_(horizon=T), spec) for p, T in enumerate(horizons) for k in range(spec.replications)
    ]
    traces = _map(_dynamics_job, jobs, spec.workers)
    rows, series = [], []
    for j, tr in zip(jobs, traces):
        final = tr.play_probs[-1]
        plays = tr.play_hist.sum(axis=0).astype(float)
        avg = plays / np.maximum(plays.sum(axis=1, keepdims=True), 1.0)
        d_final = [profile_distance(final, t) for t in targets]
        nearest = int(np.argmin(d_final))
        tail = tr.play_probs[int(0.9 * len(tr.play_probs)):]
        movement = max(
            (profile_distance(a, b) for a, b in zip(tail[:-1], tail[1:])),
            default=0.0,
        )
        rows.append(
            {
                "horizon": j.config.horizon,
                **_provenance(spec, j.replication),
                "nearest_equilibrium": nearest,
                "final_tv": d_final[nearest],
                "average_tv": profile_distance(avg, targets[nearest]),
                "tail_movement": movement,
                "certified": int(certified),
            }
        )
        if j.point == len(horizons) - 1 and j.replication == 0:
            cum = np.cumsum(tr.play_hist, axis=0).astype(float)
            for c, t in enumerate(tr.checkpoint_times):
                for i in range(base_cfg.n):
                    running = cum[c, i] / max(cum[c, i].sum(), 1.0)
                    series.append(
                        {
                            "t": int(t),
                            "queue": i,
                            **{f"p{s}": float(tr.play_probs[c, i, s]) for s in range(base_cfg.m)},
                            **{f"avg{s}": float(running[s]) for s in range(base_cfg.m)},
                            "tv_nearest": chain.tv_distance(tr.play_probs[c, i], targets[nearest][i]),
                        }
                    )
    return DynamicsResult(rows, series, equilibria)


def brute_force_throughput(mu) -> float:
    """Best average reward over every deterministic buffer-state policy, each evaluated exactly."""
    P, R = mdp.buffer_mdp(mu)
    m, S = P.shape[0], P.shape[1]
    best = -np.inf
    for actions in itertools.product(range(m), repeat=S):
        Pa = np.array([P[a, s] for s, a in enumerate(actions)])
        r = np.array([R[s, a] for s, a in enumerate(actions)])
        A = Pa.T - np.eye(S)
        A[-1] = 1.0
        b = np.zeros(S)
        b[-1] = 1.0
        pi = np.linalg.lstsq(A, b, rcond=None)[0]
        best = max(best, float(pi @ r))
    return best


def oracle(spec: ExperimentSpec, ns=range(1, 7), ks=range(1, 9)) -> list[dict]:
    """Coordinated-throughput MDP value plus the uniform-spreading formula vs Monte Carlo."""
    mu = tuple(spec.service_rates) or (0.5, 0.5)
    rows = [
        {
            "quantity": "mdp_optimal_throughput",
            "n": 1,
            "k": len(mu),
            "value": mdp.mdp_optimal_throughput(mu, spec.buffer_mode),
            "check": brute_force_throughput(mu) if spec.buffer_mode is BufferMode.UNIT else max(mu),
            "stderr": 0.0,
            **_provenance(spec, 0),
        }
    ]
    for n in ns:
        for k in ks:
            est = bounds.monte_carlo_acceptance(n, k, spec.horizon, spec.master_seed)
            rows.append(
                {
                    "quantity": "lower_bound_acceptance",
                    "n": n,
                    "k": k,
                    "value": bounds.lower_bound_acceptance(n, k),
                    "check": est.mean,
                    "stderr": est.stderr,
                    **_provenance(spec, 0),
                }
            )
    return rows


def simulate(spec: ExperimentSpec, record: bool = False) -> tuple[Trace, list[dict]]:
    """One traced run; rows are checkpoints."""
    cfg = SystemConfig(spec.arrival_rates, spec.service_rates, spec.buffer_mode, spec.horizon, spec.master_seed)
    tr = run(cfg, policies_for(spec, cfg), checkpoint_stride=spec.checkpoint_stride or None, record=record)
    rows = []
    for c, t in enumerate(tr.checkpoint_times):
        row = {"t": int(t), **_provenance(spec, 0), "total_queue": int(tr.queue_lengths[c].sum())}
        row.update({f"q{i}": int(x) for i, x in enumerate(tr.queue_lengths[c])})
        row["arrived"] = int(tr.cum_arrivals[c].sum())
        row["served"] = int(tr.cum_served[c].sum())
        rows.append(row)
    return tr, rows


def summarize(rows: list[dict], by: str | tuple, value: str) -> list[dict]:
    """Mean, min, max and 2.5/97.5 percentiles of ``value`` per group, groups in first-seen order."""
    keys = (by,) if isinstance(by, str) else tuple(by)
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(float(r[value]))
    out = []
    for g, vals in groups.items():
        v = np.sort(np.array(vals))
        out.append(
            {
                **dict(zip(keys, g)),
                "count": len(v),
                "mean": float(v.mean()),
                "min": float(v[0]),
                "max": float(v[-1]),
                "p2.5": float(np.percentile(v, 2.5)),
                "p97.5": float(np.percentile(v, 97.5)),
            }
        )
    return out


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(successes, trials).proportion_ci(level, method="wilson")
    return float(ci.low), float(ci.high)


def exceedance_summary(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[int]] = {}
    for r in rows:
        groups.setdefault((r["ratio"], r["buffer_mode"]), []).append(int(r["exceeds_sqrt_T"]))
    out = []
    for (ratio, mode), flags in groups.items():
        lo, hi = wilson_interval(sum(flags), len(flags))
        out.append({"ratio": ratio, "buffer_mode": mode, "trials": len(flags), "probability": sum(flags) / len(flags), "ci_low": lo, "ci_high": hi})
    return out


RUNNERS = {
    ExperimentKind.SWEEP: symmetric_sweep,
    ExperimentKind.ENSEMBLE: random_ensemble,
    ExperimentKind.BUFFERS: buffer_compare,
    ExperimentKind.ORACLE: oracle,
}
