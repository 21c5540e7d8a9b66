"""Clearing-rate distributions for the 4-queue, 5-server system, buffered vs unbuffered."""
from _common import finish, parse, write
from scipy import stats

from queuegame.experiments import ExperimentSpec, buffer_compare, summarize

args = parse(__doc__, horizon=10_000, reps=100)
spec = finish(
    ExperimentSpec(kind="BufferCompare", horizon=args.horizon, replications=args.reps, variant="clearing"), args
)
rows = buffer_compare(spec)
write(rows, args, "buffer_clearing_raw.csv", spec)
for s in summarize(rows, "buffer_mode", "clearing_rate"):
    print(f"{s['buffer_mode']:>10}  mean={s['mean']:.4f}  range=[{s['min']:.4f}, {s['max']:.4f}]")
a = [r["clearing_rate"] for r in rows if r["buffer_mode"] == "UnitBuffer"]
b = [r["clearing_rate"] for r in rows if r["buffer_mode"] == "NoBuffer"]
print("Welch t-test p =", stats.ttest_ind(a, b, equal_var=False).pvalue)
