"""Stratified splitting Monte Carlo estimation."""
from .engine import (
    AggregateEstimate,
    LevelSchedule,
    Orientation,
    ProblemSpec,
    RunConfig,
    SsaRun,
    StratumRecord,
    percent_error,
    pilot_levels,
    pilot_run,
    replicate,
    replicate_to_re,
    run_issa,
    run_ssa,
)

__version__ = "0.1.0"
