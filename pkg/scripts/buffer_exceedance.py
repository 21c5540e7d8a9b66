"""Probability that some queue ends above sqrt(T), with and without server buffers."""
from _common import finish, parse, write

from queuegame.experiments import ExperimentSpec, buffer_compare
from queuegame.experiments.runs import exceedance_summary

args = parse(__doc__, horizon=20_000, reps=30)
spec = finish(
    ExperimentSpec(kind="BufferCompare", horizon=args.horizon, replications=args.reps, variant="exceedance"), args
)
rows = buffer_compare(spec)
write(rows, args, "buffer_exceedance_raw.csv", spec)
summary = exceedance_summary(rows)
write(summary, args, "buffer_exceedance_summary.csv", spec)
for s in summary:
    print(f"r={s['ratio']:.2f} {s['buffer_mode']:>10}  p={s['probability']:.3f}  [{s['ci_low']:.3f}, {s['ci_high']:.3f}]")
