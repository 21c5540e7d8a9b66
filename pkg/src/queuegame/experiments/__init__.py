from .config import ConfigError, ExperimentKind, ExperimentSpec, export, load_spec, render, read_csv, spec_hash
from .runs import (
    buffer_compare,
    dynamics_study,
    oracle,
    random_ensemble,
    simulate,
    summarize,
    symmetric_sweep,
)
