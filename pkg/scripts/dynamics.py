"""Play dynamics on two-queue, two-server games and distance to pure equilibria."""
from _common import finish, parse, write

from queuegame.experiments import ExperimentSpec, dynamics_study, summarize
from queuegame.experiments.runs import ASYMMETRIC_GAME, SYMMETRIC_GAME

args = parse(__doc__, reps=30)
instances = {"asymmetric_game": ASYMMETRIC_GAME, "symmetric_game": SYMMETRIC_GAME}
for name, (lam, mu) in instances.items():
    horizons = [2_000, 8_000, 32_000] if name == "symmetric_game" else [32_000]
    spec = ExperimentSpec(
        kind="Dynamics", horizon=max(horizons), horizons=horizons, replications=args.reps,
        arrival_rates=list(lam), service_rates=list(mu),
    )
    spec = finish(spec, args)
    res = dynamics_study(spec)
    print(f"{name}: certified pure equilibria: {[e.strategies.argmax(axis=1).tolist() for e in res.equilibria]}")
    write(res.rows, args, f"{name}_raw.csv", spec)
    write(res.series, args, f"{name}_series.csv", spec)
    for s in summarize(res.rows, "horizon", "final_tv"):
        print(f"  T={s['horizon']:>7}  mean final TV={s['mean']:.4f}")
