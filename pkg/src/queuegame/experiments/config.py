"""Experiment specs: TOML ingestion, canonical hashing, CSV/JSON export."""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import tomli

from ..model import BufferMode


class ExperimentKind(str, enum.Enum):
    SIMULATE = "Simulate"
    SWEEP = "SymmetricSweep"
    ENSEMBLE = "RandomEnsemble"
    BUFFERS = "BufferCompare"
    DYNAMICS = "Dynamics"
    ORACLE = "Oracle"


class ConfigError(ValueError):
    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.field = field
        self.line = line

    def as_dict(self) -> dict:
        return {"error": "ConfigError", "message": str(self), "field": self.field, "line": self.line}


@dataclass
class ExperimentSpec:
    kind: ExperimentKind
    horizon: int
    arrival_rates: list[float] = field(default_factory=list)
    service_rates: list[float] = field(default_factory=list)
    buffer_mode: BufferMode = BufferMode.UNIT
    ratios: list[float] = field(default_factory=list)
    replications: int = 30
    horizons: list[int] = field(default_factory=list)
    policy: str = "EXP3"
    gamma: Optional[float] = None
    learning_rate: Optional[float] = None
    n_queues: int = 0
    n_servers: int = 0
    ensemble_size: int = 30
    variant: str = ""
    checkpoint_stride: int = 0
    workers: int = 1
    master_seed: int = 0
    output: str = ""
    format: str = "csv"

    def __post_init__(self):
        self.kind = ExperimentKind(self.kind)
        self.buffer_mode = BufferMode(self.buffer_mode)
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be >= 1", "horizon")
        if int(self.replications) < 1:
            raise ConfigError("replications must be >= 1", "replications")
        if any(not (0 < r <= 1) for r in self.ratios):
            raise ConfigError("ratio values must lie in (0, 1]", "ratios")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json", "format")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kind"] = self.kind.value
        d["buffer_mode"] = self.buffer_mode.value
        return d

    def replace(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)


FIELDS = {f.name for f in dataclasses.fields(ExperimentSpec)}
REQUIRED = {"kind", "horizon"}


def spec_from_dict(data: dict[str, Any]) -> ExperimentSpec:
    unknown = sorted(set(data) - FIELDS)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}", unknown[0])
    missing = sorted(REQUIRED - set(data))
    if missing:
        raise ConfigError(f"missing required field {missing[0]!r}", missing[0])
    try:
        return ExperimentSpec(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _toml_value(v) -> str:
    if isinstance(v, enum.Enum):
        v = v.value
    return json.dumps(v)


def dump_spec(spec: ExperimentSpec) -> str:
    """TOML text for ``spec``; None-valued fields are omitted."""
    return "".join(f"{k} = {_toml_value(v)}\n" for k, v in spec.to_dict().items() if v is not None)


def parse_spec(text: str) -> ExperimentSpec:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = None
        msg = str(exc)
        if "end of document" in msg:
            line = max(1, len(text.splitlines()))
        elif "line " in msg:
            try:
                line = int(msg.split("line ")[1].split(",")[0].rstrip(")"))
            except ValueError:
                pass
        raise ConfigError(f"malformed config: {msg}", line=line) from exc
    return spec_from_dict(data)


def load_spec(path) -> ExperimentSpec:
    """Read a spec from TOML, or recover it from a CSV/JSON file written by :func:`export`."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
        return spec_from_dict(doc["spec"] if "spec" in doc else doc)
    if path.suffix == ".csv":
        header = [line[2:] for line in text.splitlines() if line.startswith("# ")]
        return parse_spec("\n".join(header) + "\n")
    return parse_spec(text)


# fields that change how a run executes or where it is written, never its results
NON_SEMANTIC = ("workers", "output", "format")


def spec_hash(spec: ExperimentSpec) -> str:
    d = {k: v for k, v in spec.to_dict().items() if k not in NON_SEMANTIC}
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, enum.Enum):
        return v.value
    return v


def render(rows: list[dict], fmt: str = "csv", spec: Optional[ExperimentSpec] = None) -> str:
    """Rows as CSV text (spec as leading ``# `` comment lines) or as a JSON document."""
    columns = list(rows[0]) if rows else []
    if fmt == "csv":
        buf = io.StringIO()
        if spec is not None:
            for line in dump_spec(spec).splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])
        text = buf.getvalue()
    elif fmt == "json":
        doc = {
            "spec": spec.to_dict() if spec else None,
            "config_hash": spec_hash(spec) if spec else None,
            "master_seed": spec.master_seed if spec else None,
            "columns": columns,
            "rows": [{c: _cell(r[c]) for c in columns} for r in rows],
        }
        text = json.dumps(doc, indent=1) + "\n"
    else:
        raise ConfigError(f"unknown format {fmt!r}", "format")
    return text


def export(rows: list[dict], path, fmt: str = "csv", spec: Optional[ExperimentSpec] = None) -> Path:
    path = Path(path)
    text = render(rows, fmt, spec)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def read_csv(path) -> list[dict]:
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("# ")]
    return list(csv.DictReader(lines))
