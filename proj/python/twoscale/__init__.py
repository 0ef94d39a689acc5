"""Two-scale expansion engine and convergence harness."""

from ._core import (
    ConfigError,
    ConvergenceReport,
    DegenerateFlowError,
    DivergenceError,
    Error,
    InputError,
    IoError,
    SequencingError,
    SlopeFit,
    SweepConfig,
    default_fields,
    fit_slope,
    load_config,
    parse_config,
    parse_number,
    presets,
    read_report,
    run_invariants,
    run_sweep,
    set_workers,
)

__all__ = [
    "ConfigError",
    "ConvergenceReport",
    "DegenerateFlowError",
    "DivergenceError",
    "Error",
    "InputError",
    "IoError",
    "SequencingError",
    "SlopeFit",
    "SweepConfig",
    "default_fields",
    "fit_slope",
    "load_config",
    "parse_config",
    "parse_number",
    "presets",
    "read_report",
    "run_invariants",
    "run_sweep",
    "set_workers",
]
