"""Single-queue coordinated optimum and the uniform-spreading acceptance formula vs Monte Carlo."""
from _common import finish, parse, write

from queuegame.experiments import ExperimentSpec, oracle

args = parse(__doc__, steps=1_000_000)
spec = finish(ExperimentSpec(kind="Oracle", horizon=args.steps, service_rates=[0.5, 0.5]), args)
rows = oracle(spec)
write(rows, args, "oracle.csv", spec)
print(f"optimal throughput {rows[0]['value']:.12f} (brute force {rows[0]['check']:.12f})")
worst = max(abs(r["value"] - r["check"]) / r["stderr"] for r in rows[1:] if r["stderr"] > 0)
print(f"largest formula vs Monte Carlo gap: {worst:.2f} standard errors")
