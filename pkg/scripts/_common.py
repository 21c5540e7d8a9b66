import argparse
from pathlib import Path

from queuegame.experiments import export
from queuegame.experiments.runs import full_scale


def parse(description, **defaults):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out-dir", type=Path, default=Path("results"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--paper-scale", action="store_true")
    for k, v in defaults.items():
        p.add_argument(f"--{k.replace('_', '-')}", type=type(v), default=v)
    return p.parse_args()


def finish(spec, args):
    spec = spec.replace(master_seed=args.seed, workers=args.workers)
    return full_scale(spec) if args.paper_scale else spec


def write(rows, args, name, spec):
    path = export(rows, args.out_dir / name, "csv", spec)
    print(f"wrote {len(rows)} rows to {path}")
