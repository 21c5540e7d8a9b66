"""Normalized buildup vs load ratio: three queues, servers mu = (0.8, 0.2, 0.2)."""
from _common import finish, parse, write

from queuegame.experiments import ExperimentSpec, summarize, symmetric_sweep

args = parse(__doc__, horizon=20_000, reps=30)
spec = finish(ExperimentSpec(kind="SymmetricSweep", horizon=args.horizon, replications=args.reps), args)
rows = symmetric_sweep(spec)
write(rows, args, "symmetric_sweep_raw.csv", spec)
summary = summarize(rows, "ratio", "normalized_buildup")
write(summary, args, "symmetric_sweep_summary.csv", spec)
for s in summary:
    print(f"r={s['ratio']:.2f}  mean={s['mean']:.5f}  min={s['min']:.5f}  max={s['max']:.5f}")
