"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a single ``CRITERION k: PASS|FAIL ...`` line; the lines
are printed as they are produced (visible with ``-s``) and again in the
terminal summary. Run directly with ``python tests/test_acceptance.py``.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats

from queuegame import BufferMode, SystemConfig, make_policy, run
from queuegame import diagnostics as dg
from queuegame.analysis import chain
from queuegame.analysis.bounds import lower_bound_acceptance, monte_carlo_acceptance
from queuegame.analysis.mdp import mdp_optimal_throughput
from queuegame.experiments import ExperimentSpec, buffer_compare, dynamics_study, summarize, symmetric_sweep
from queuegame.experiments.runs import brute_force_throughput, pure_profiles

SEED = 1
RESULTS: dict[int, str] = {}


def report(k: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[k] = line
    print(line)


def test_criterion_1_coordinated_optimum():
    t0 = time.perf_counter()
    value = mdp_optimal_throughput((0.5, 0.5), BufferMode.UNIT, tolerance=1e-13)
    brute = brute_force_throughput((0.5, 0.5))
    elapsed = time.perf_counter() - t0
    ok = value <= 23 / 24 + 1e-9 and abs(value - brute) <= 1e-9 and elapsed < 1.0
    report(1, ok, f"optimum={value:.12f} brute={brute:.12f} bound={23 / 24:.6f} time={elapsed:.3f}s")
    assert ok


def test_criterion_2_uniform_spreading_formula():
    t0 = time.perf_counter()
    worst, misses = 0.0, []
    threshold_ok = True
    for n in range(1, 7):
        for k in range(1, 9):
            exact = lower_bound_acceptance(n, k)
            est = monte_carlo_acceptance(n, k, 1_000_000, seed=SEED)
            z = abs(est.mean - exact) / est.stderr if est.stderr > 0 else (0.0 if est.mean == exact else math.inf)
            worst = max(worst, z)
            if not est.within(exact, 3.0):
                misses.append((n, k, round(z, 2)))
            threshold_ok &= (exact > 0.5) == (k > n - 1)
    elapsed = time.perf_counter() - t0
    ok = not misses and threshold_ok and elapsed < 60
    report(2, ok, f"48 cells, max |z|={worst:.2f}, misses={misses}, threshold rule exact={threshold_ok}, time={elapsed:.1f}s")
    assert ok


def stable_instances(count=20, n=3, m=4):
    rng = np.random.default_rng(1)
    out = []
    while len(out) < count:
        mu = rng.uniform(0, 1, m)
        lam = rng.uniform(0, 1, n)
        lam *= rng.uniform(0.1, 0.33) * mu.sum() / lam.sum()
        if lam.max() < 0.5:
            out.append((lam, mu))
    return out


@pytest.fixture(scope="module")
def stability_runs():
    T = 40_000
    W = dg.default_window(T)
    runs = []
    for idx, (lam, mu) in enumerate(stable_instances()):
        cfg = SystemConfig(lam, mu, BufferMode.UNIT, T, SEED)
        delta = dg.default_delta(lam)
        pols = lambda: [make_policy("EXP3", cfg.m, T) for _ in range(cfg.n)]  # noqa: E731
        fresh = run(cfg, pols(), record=True, replication=idx)
        # second run from a backlog so windows with large potential exist
        loaded = run(cfg, pols(), record=True, replication=idx, initial_lengths=[3 * W] * cfg.n)
        runs.append((cfg, delta, W, fresh, loaded))
    return runs


def test_criterion_3_stability(stability_runs):
    T = 40_000
    ratios, drifts, failures = [], [], []
    for idx, (cfg, delta, W, fresh, loaded) in enumerate(stability_runs):
        total = fresh.steps.queue_lengths.sum(axis=1)
        late = total[int(0.9 * T):].mean()
        mid = total[int(0.4 * T):int(0.5 * T)].mean()
        ratio_ok = late <= 2 * mid
        ratios.append((late, mid))
        est = dg.drift_estimate([fresh, loaded], W, delta, float(W))
        drift_ok = isinstance(est, dg.DriftEstimate) and est.negative
        drifts.append(est)
        if not (ratio_ok and drift_ok):
            failures.append((idx, round(late, 3), round(mid, 3), getattr(est, "upper95", None)))
    ok = not failures
    upper = max(e.upper95 for e in drifts if isinstance(e, dg.DriftEstimate))
    counts = sum(e.count for e in drifts)
    report(
        3,
        ok,
        f"20 instances, tail/mid means ok={20 - sum(1 for f in failures)}, "
        f"drift windows={counts}, worst upper95={upper:.1f}, failures={failures}",
    )
    assert ok


def test_criterion_4_symmetric_transition():
    spec = ExperimentSpec(kind="SymmetricSweep", horizon=20_000, replications=30, master_seed=SEED)
    summary = {s["ratio"]: s["mean"] for s in summarize(symmetric_sweep(spec), "ratio", "normalized_buildup")}
    low, high = summary[0.4], summary[0.95]
    rho = stats.spearmanr(list(summary), list(summary.values())).statistic
    ok = low < 0.01 and high > 0.05 and rho > 0.9
    report(4, ok, f"buildup@0.4={low:.2e} (<0.01) buildup@0.95={high:.4f} (>0.05) spearman={rho:.3f} (>0.9)")
    assert ok


def test_criterion_5_buffer_clearing_separation():
    spec = ExperimentSpec(kind="BufferCompare", horizon=10_000, replications=100, variant="clearing", master_seed=SEED)
    rows = buffer_compare(spec)
    a = np.array([r["clearing_rate"] for r in rows if r["buffer_mode"] == "UnitBuffer"])
    b = np.array([r["clearing_rate"] for r in rows if r["buffer_mode"] == "NoBuffer"])
    p = stats.ttest_ind(a, b, equal_var=False).pvalue
    ok = a.mean() - b.mean() >= 0.02 and p < 0.01
    report(5, ok, f"buffered={a.mean():.4f} unbuffered={b.mean():.4f} diff={a.mean() - b.mean():.4f} Welch p={p:.1e}")
    assert ok


def test_criterion_6_convergence_to_pure_equilibrium():
    cfg = SystemConfig((0.25, 0.25), (2 / 3, 2 / 3), BufferMode.UNIT, 1, SEED)
    certified = []
    for prof in pure_profiles(2, 2):
        rep = chain.equilibrium_report(prof, cfg)
        if rep.certified(1e-3):
            certified.append((prof.argmax(axis=1).tolist(), float(rep.gaps.max())))
    spec = ExperimentSpec(
        kind="Dynamics", horizon=32_000, horizons=[2_000, 8_000, 32_000], replications=50,
        arrival_rates=[0.25, 0.25], service_rates=[2 / 3, 2 / 3], master_seed=SEED,
    )
    res = dynamics_study(spec)
    medians = [float(np.median([r["final_tv"] for r in res.rows if r["horizon"] == T])) for T in spec.horizons]
    decreasing = all(x > y for x, y in zip(medians, medians[1:]))
    ok = len(certified) >= 1 and all(g <= 1e-3 for _, g in certified) and decreasing
    report(6, ok, f"certified pure profiles={certified}, median final TV by T={[round(x, 4) for x in medians]}")
    assert ok


def test_criterion_7_conservation():
    rng = np.random.default_rng(SEED)
    bad = 0
    total = 0
    for mode in BufferMode:
        for k in range(1000):
            n, m = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            cfg = SystemConfig(rng.random(n), rng.random(m), mode, 200, int(rng.integers(2**63)))
            kind = ("EXP3", "EXP3P", "UniformRandom")[k % 3]
            tr = run(cfg, [make_policy(kind, m, 200) for _ in range(n)])
            total += 1
            bad += int(tr.arrivals.sum()) != tr.in_queues() + tr.in_buffers() + tr.total_served()
    ok = bad == 0
    report(7, ok, f"{total} traces (1000 per buffer mode), violations={bad}")
    assert ok


def test_criterion_8_window_bounds(stability_runs):
    good = l3_checked = l4_checked = 0
    l3_bad = l4_bad = 0
    for cfg, delta, W, fresh, loaded in stability_runs:
        for tr in (fresh, loaded):
            for r in dg.window_reports(tr, W, delta):
                good += r.good
                v3 = dg.busy_servers_shortfall(r, cfg.arrival_rates, cfg.service_rates)
                if v3 is not None and r.good:
                    l3_checked += 1
                    l3_bad += v3 > 1e-9
                v4 = dg.open_server_violations(r, cfg.arrival_rates)
                if v4 is not None:
                    l4_checked += 1
                    l4_bad += bool(v4)
    ok = l3_bad == 0 and l4_bad == 0
    report(
        8,
        ok,
        f"good windows={good}; busy-server bound windows checked={l3_checked} violations={l3_bad}; "
        f"open-server bound windows checked={l4_checked} violations={l4_bad}",
    )
    assert ok


CLI_CASES = [
    ["simulate", "--horizon", "2000"],
    ["sweep", "--horizon", "1000", "--reps", "2"],
    ["sweep", "--horizon", "1000", "--reps", "2", "--summary", "--format", "json"],
    ["ensemble", "--horizon", "1000", "--reps", "3"],
    ["compare-buffers", "--horizon", "1000", "--reps", "3"],
    ["compare-buffers", "--horizon", "1000", "--reps", "3", "--variant", "exceedance", "--summary"],
    ["dynamics", "--horizon", "2000", "--reps", "3"],
    ["oracle", "--horizon", "20000"],
]


def _cli(args, cwd):
    return subprocess.run([sys.executable, "-m", "queuegame.cli", *args], cwd=cwd, capture_output=True, timeout=600)


def test_criterion_9_cli_determinism(tmp_path):
    mismatched = []
    for case in CLI_CASES:
        outputs = []
        for attempt in range(2):
            out = tmp_path / f"{case[0]}_{attempt}.out"
            proc = _cli([*case, "--seed", str(SEED), "--out", str(out)], tmp_path)
            assert proc.returncode == 0, proc.stderr.decode()
            outputs.append(out.read_bytes())
        if outputs[0] != outputs[1]:
            mismatched.append(" ".join(case))
    # diagnose reads a saved trace
    trace = tmp_path / "trace.npz"
    assert _cli(["simulate", "--horizon", "2500", "--seed", str(SEED), "--save-trace", str(trace)], tmp_path).returncode == 0
    diag = [_cli(["diagnose", str(trace)], tmp_path).stdout for _ in range(2)]
    if diag[0] != diag[1] or not diag[0]:
        mismatched.append("diagnose")
    ok = not mismatched
    report(9, ok, f"{len(CLI_CASES) + 1} commands rerun, mismatches={mismatched}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
