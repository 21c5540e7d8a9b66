"""Stability diagnostics over recorded traces.

A window of length L is *good* for a slack ``delta`` when arrivals are
concentrated (condition 1), busy servers serve close to half their rate
(condition 2) and every queue's estimated regret is at most ``delta * L``
(condition 3). The potential

    Phi = sum_i max(N_i - (lambda_i / 2 + 2 delta) L, 0)

should drift down across windows once it is large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .engine import Trace
from .model import ContractViolation


def potential(queue_lengths, arrival_rates, delta: float, window: int) -> float:
    if delta < 0 or window < 1:
        raise ContractViolation("need delta >= 0 and window >= 1")
    N = np.asarray(queue_lengths, dtype=float)
    lam = np.asarray(arrival_rates, dtype=float)
    return float(np.maximum(N - (0.5 * lam + 2.0 * delta) * window, 0.0).sum())


def default_delta(arrival_rates) -> float:
    """Largest slack (capped at 0.01) that keeps the open-server bound's precondition."""
    return min(0.01, 0.5 * (0.5 - max(arrival_rates)) / 2.0)


def default_window(horizon: int) -> int:
    return math.ceil(math.sqrt(horizon))


def max_interval_excess(arrivals: np.ndarray, rate: float, all_intervals: bool = False) -> float:
    """Largest ``sum(arrivals over I) - rate * |I|`` over checked sub-intervals I.

    By default only intervals anchored at the window start or end are
    checked; ``all_intervals`` covers every contiguous interval (O(L) via a
    running minimum of the centred partial sums).
    """
    g = np.concatenate([[0.0], np.cumsum(arrivals - rate)])
    if all_intervals:
        return float(np.max(g[1:] - np.minimum.accumulate(g[:-1])))
    prefix = g[1:].max()
    suffix = (g[-1] - g[:-1]).max()
    return float(max(prefix, suffix))


@dataclass
class WindowReport:
    start: int
    length: int
    delta: float
    cond1_holds: bool
    cond2_holds: bool
    cond3_holds: bool
    arrival_excess: np.ndarray  # per queue, max over sub-intervals of arrivals - lambda * length
    occupied_fraction: np.ndarray  # per server
    served: np.ndarray  # per server
    regret: np.ndarray  # per queue, estimated over the window
    lengths_start: np.ndarray
    lengths_end: np.ndarray
    phi_start: float
    phi_end: float

    @property
    def good(self) -> bool:
        return self.cond1_holds and self.cond2_holds and self.cond3_holds

    @property
    def phi_change(self) -> float:
        return self.phi_end - self.phi_start


def _lengths_before(trace: Trace, t: int) -> np.ndarray:
    return trace.initial_lengths.copy() if t == 0 else trace.steps.queue_lengths[t - 1].astype(np.int64)


def window_report(
    trace: Trace,
    start: int,
    length: int,
    delta: float,
    all_intervals: bool = False,
) -> WindowReport:
    """Evaluate the three good-window conditions on steps ``[start, start + length)``."""
    if trace.steps is None:
        raise ContractViolation("window reports need a trace recorded with record=True")
    if length < 1 or start < 0 or start + length > len(trace.steps):
        raise ContractViolation("window must lie inside the recorded trace")
    cfg = trace.config
    rec = trace.steps
    sl = slice(start, start + length)
    L = length
    lam = np.array(cfg.arrival_rates)
    mu = np.array(cfg.service_rates)

    excess = np.array(
        [max_interval_excess(rec.arrivals[sl, i].astype(float), lam[i], all_intervals) for i in range(cfg.n)]
    )
    cond1 = bool(np.all(excess <= delta * L + 1e-9))

    occupied = rec.occupied[sl].sum(axis=0)
    served = rec.served[sl].sum(axis=0)
    busy = occupied >= L / 2
    cond2 = bool(np.all(served[busy] >= (0.5 * mu[busy] - delta) * L - 1e-9))

    cf = rec.counterfactual[sl].sum(axis=0)
    realized = rec.rewards[sl].sum(axis=0)
    regret = cf.max(axis=1) - realized
    cond3 = bool(np.all(regret <= delta * L + 1e-9))

    n_start = _lengths_before(trace, start)
    n_end = rec.queue_lengths[start + L - 1].astype(np.int64)
    return WindowReport(
        start=start,
        length=L,
        delta=delta,
        cond1_holds=cond1,
        cond2_holds=cond2,
        cond3_holds=cond3,
        arrival_excess=excess,
        occupied_fraction=occupied / L,
        served=served,
        regret=regret,
        lengths_start=n_start,
        lengths_end=n_end,
        phi_start=potential(n_start, lam, delta, L),
        phi_end=potential(n_end, lam, delta, L),
    )


def window_reports(trace: Trace, length: int, delta: float, all_intervals: bool = False) -> list[WindowReport]:
    """Reports for consecutive non-overlapping windows covering the trace."""
    T = len(trace.steps)
    return [window_report(trace, s, length, delta, all_intervals) for s in range(0, T - length + 1, length)]


@dataclass
class DriftEstimate:
    mean: float
    stderr: float
    count: int
    upper95: float

    @property
    def negative(self) -> bool:
        """Mean drift is below zero with 95% confidence (one-sided)."""
        return self.upper95 < 0


@dataclass
class InsufficientData:
    count: int = 0
    reason: str = "no window started with potential above the threshold"


def drift_estimate(
    traces: Iterable[Trace],
    window: int,
    delta: float,
    threshold: float,
    reports: Optional[Sequence[WindowReport]] = None,
):
    """Mean change of the potential over windows whose start potential is >= threshold.

    Returns :class:`DriftEstimate`, or :class:`InsufficientData` when fewer
    than two windows qualify.
    """
    if reports is None:
        reports = [r for tr in traces for r in window_reports(tr, window, delta)]
    changes = np.array([r.phi_change for r in reports if r.phi_start >= threshold])
    if len(changes) < 2:
        return InsufficientData(count=len(changes))
    mean = float(changes.mean())
    se = float(changes.std(ddof=1) / math.sqrt(len(changes)))
    upper = mean + stats.t.ppf(0.95, len(changes) - 1) * se
    return DriftEstimate(mean=mean, stderr=se, count=len(changes), upper95=float(upper))


def busy_servers_shortfall(report: WindowReport, arrival_rates, service_rates) -> Optional[float]:
    """Shortfall of the full-server decrease bound, or None if the premise fails.

    Premise: conditions 1 and 2 hold and every server held a packet in at
    least half the steps. Then total queue length must fall by at least
    (sum(mu)/2 - sum(lambda) - (n + m) delta) L. Returns the (nonpositive
    when satisfied) amount by which the bound is missed.
    """
    if not (report.cond1_holds and report.cond2_holds and np.all(report.occupied_fraction >= 0.5)):
        return None
    n, m = len(arrival_rates), len(service_rates)
    bound = (0.5 * sum(service_rates) - sum(arrival_rates) - (n + m) * report.delta) * report.length
    decrease = int(report.lengths_start.sum() - report.lengths_end.sum())
    return bound - decrease


def open_server_violations(report: WindowReport, arrival_rates) -> Optional[list[int]]:
    """Queues breaking the open-server bound, or None if the premise fails.

    Premise: a good window in which some server was empty in more than half
    the steps. Each queue with delta < (1/2 - lambda_i)/2 must either shrink
    or end with at most (lambda_i / 2 + 2 delta) L packets.
    """
    if not report.good or not np.any(report.occupied_fraction < 0.5):
        return None
    d, L = report.delta, report.length
    bad = []
    for i, lam in enumerate(arrival_rates):
        if not d < 0.5 * (0.5 - lam):
            continue
        shrank = report.lengths_end[i] < report.lengths_start[i]
        small = report.lengths_end[i] <= (0.5 * lam + 2 * d) * L + 1e-9
        if not (shrank or small):
            bad.append(i)
    return bad


def buildup(trace: Trace, normalized: bool = True, include_buffers: bool = False) -> float:
    """Packets left in the queues at the horizon, by default divided by n * T."""
    total = trace.in_queues() + (trace.in_buffers() if include_buffers else 0)
    if normalized:
        return total / (trace.config.n * trace.horizon)
    return float(total)


def clearing_rate(trace: Trace) -> float:
    """Packets served per step, system-wide."""
    return trace.total_served() / trace.horizon
