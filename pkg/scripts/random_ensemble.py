"""Normalized buildup vs load ratio over random 5-queue, 6-server systems."""
from _common import finish, parse, write

from queuegame.experiments import ExperimentSpec, random_ensemble, summarize

args = parse(__doc__, horizon=20_000, size=30)
spec = finish(ExperimentSpec(kind="RandomEnsemble", horizon=args.horizon, ensemble_size=args.size), args)
rows = random_ensemble(spec)
write(rows, args, "random_ensemble_raw.csv", spec)
summary = summarize(rows, "ratio", "normalized_buildup")
write(summary, args, "random_ensemble_summary.csv", spec)
for s in summary:
    print(f"r={s['ratio']:.2f}  mean={s['mean']:.5f}  band=[{s['p2.5']:.5f}, {s['p97.5']:.5f}]")
