"""Command line entry point: ``queuegame <command> [options]``.

Tables go to ``--out`` (or stdout). Failures print one JSON object on
stderr and exit nonzero: 2 for bad input, 1 for anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import diagnostics
from .engine import load_trace, save_trace
from .experiments import runs
from .experiments.config import ConfigError, ExperimentKind, ExperimentSpec, load_spec, render
from .model import ContractViolation

COMMANDS = {
    "simulate": ExperimentKind.SIMULATE,
    "sweep": ExperimentKind.SWEEP,
    "ensemble": ExperimentKind.ENSEMBLE,
    "compare-buffers": ExperimentKind.BUFFERS,
    "dynamics": ExperimentKind.DYNAMICS,
    "oracle": ExperimentKind.ORACLE,
}

# desk-scale defaults used when no --config is given
DEFAULTS = {
    ExperimentKind.SIMULATE: dict(
        horizon=20_000, arrival_rates=[0.2, 0.2, 0.2], service_rates=list(runs.SWEEP_SERVICE), replications=1
    ),
    ExperimentKind.SWEEP: dict(horizon=20_000, replications=30),
    ExperimentKind.ENSEMBLE: dict(horizon=20_000, ensemble_size=30),
    ExperimentKind.BUFFERS: dict(horizon=10_000, replications=30, variant="clearing"),
    ExperimentKind.DYNAMICS: dict(horizon=32_000, horizons=[2_000, 8_000, 32_000], replications=30),
    ExperimentKind.ORACLE: dict(horizon=1_000_000, service_rates=[0.5, 0.5]),
}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML spec, or a CSV/JSON file written by this tool")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--horizon", type=int, help="steps per run (Monte Carlo steps for oracle)")
    common.add_argument("--reps", type=int, help="replications (ensemble size for ensemble)")
    common.add_argument("--out", type=Path, help="output file; stdout when omitted")
    common.add_argument("--format", choices=("csv", "json"), help="output format")
    common.add_argument("--paper-scale", action="store_true", help="use the full-size horizons and replication counts")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--summary", action="store_true", help="write per-point aggregates instead of raw rows")

    parser = _Parser(prog="queuegame", description="Queuing games with no-regret routing.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "simulate":
            p.add_argument("--save-trace", type=Path, help="also store the full per-step trace (.npz) for diagnose")
        if name == "compare-buffers":
            p.add_argument("--variant", choices=("clearing", "exceedance"))
        if name == "dynamics":
            p.add_argument("--series-out", type=Path, help="write the per-checkpoint play series here")
    d = sub.add_parser("diagnose", parents=[common])
    d.add_argument("trace", type=Path, help=".npz trace from simulate --save-trace")
    d.add_argument("--window", type=int, help="window length (default ceil(sqrt(T)))")
    d.add_argument("--delta", type=float, help="slack (default from the arrival rates)")
    d.add_argument("--all-intervals", action="store_true", help="check every sub-interval for the arrival condition")
    return parser


def resolve_spec(args) -> ExperimentSpec:
    kind = COMMANDS[args.command]
    if args.config is not None:
        spec = load_spec(args.config)
        if spec.kind is not kind:
            raise ConfigError(f"config is for {spec.kind.value}, not {kind.value}", "kind")
    else:
        spec = ExperimentSpec(kind=kind, **DEFAULTS[kind])
    if args.paper_scale:
        spec = runs.full_scale(spec)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.horizon is not None:
        changes["horizon"] = args.horizon
        if kind is ExperimentKind.DYNAMICS:
            changes["horizons"] = [args.horizon]
    if args.reps is not None:
        changes["ensemble_size" if kind is ExperimentKind.ENSEMBLE else "replications"] = args.reps
    if args.format is not None:
        changes["format"] = args.format
    if args.workers is not None:
        changes["workers"] = args.workers
    if getattr(args, "variant", None):
        changes["variant"] = args.variant
    return spec.replace(**changes)


def execute(args) -> tuple[list[dict], ExperimentSpec | None]:
    if args.command == "diagnose":
        return diagnose(args), None
    spec = resolve_spec(args)
    kind = spec.kind
    if kind is ExperimentKind.SIMULATE:
        trace, rows = runs.simulate(spec, record=args.save_trace is not None)
        if args.save_trace is not None:
            save_trace(trace, args.save_trace)
        return rows, spec
    if kind is ExperimentKind.DYNAMICS:
        res = runs.dynamics_study(spec)
        if args.series_out is not None:
            Path(args.series_out).write_text(render(res.series, spec.format, spec))
        rows = res.rows
        if args.summary:
            rows = runs.summarize(rows, "horizon", "final_tv")
        return rows, spec
    rows = runs.RUNNERS[kind](spec)
    if args.summary:
        if kind is ExperimentKind.BUFFERS and spec.variant == "exceedance":
            rows = runs.exceedance_summary(rows)
        elif kind is ExperimentKind.BUFFERS:
            rows = runs.summarize(rows, "buffer_mode", "clearing_rate")
        elif kind in (ExperimentKind.SWEEP, ExperimentKind.ENSEMBLE):
            rows = runs.summarize(rows, "ratio", "normalized_buildup")
    return rows, spec


def diagnose(args) -> list[dict]:
    trace = load_trace(args.trace)
    if trace.steps is None:
        raise ContractViolation("trace has no per-step record; rerun simulate with --save-trace")
    cfg = trace.config
    window = args.window or diagnostics.default_window(cfg.horizon)
    delta = args.delta if args.delta is not None else diagnostics.default_delta(cfg.arrival_rates)
    reports = diagnostics.window_reports(trace, window, delta, args.all_intervals)
    drift = diagnostics.drift_estimate([], window, delta, float(window), reports=reports)
    trace_hash = hashlib.sha256(repr(cfg).encode()).hexdigest()[:16]
    rows = []
    for r in reports:
        l3 = diagnostics.busy_servers_shortfall(r, cfg.arrival_rates, cfg.service_rates)
        l4 = diagnostics.open_server_violations(r, cfg.arrival_rates)
        rows.append(
            {
                "seed": cfg.master_seed,
                "replication": trace.replication,
                "config_hash": trace_hash,
                "start": r.start,
                "length": r.length,
                "delta": r.delta,
                "cond1": int(r.cond1_holds),
                "cond2": int(r.cond2_holds),
                "cond3": int(r.cond3_holds),
                "good": int(r.good),
                "phi_start": r.phi_start,
                "phi_end": r.phi_end,
                "max_regret": float(r.regret.max()),
                "busy_shortfall": "" if l3 is None else l3,
                "open_server_violations": "" if l4 is None else len(l4),
            }
        )
    summary = {"drift": type(drift).__name__, **{k: v for k, v in vars(drift).items()}}
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)
    return rows


def _fail(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        rows, spec = execute(args)
        fmt = args.format or (spec.format if spec else "csv")
        text = render(rows, fmt, spec)
        if args.out is not None:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
        return 0
    except CliError as exc:
        return _fail("UsageError", str(exc), 2)
    except ConfigError as exc:
        d = exc.as_dict()
        return _fail(d.pop("error"), d.pop("message"), 2, **d)
    except ContractViolation as exc:
        return _fail("ContractViolation", str(exc), 2)
    except OSError as exc:
        return _fail("IOError", str(exc), 1, path=str(getattr(exc, "filename", "") or ""))
    except Exception as exc:  # noqa: BLE001 - last-resort machine-readable report
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
