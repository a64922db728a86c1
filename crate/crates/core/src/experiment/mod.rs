//! Experiment plans, parameter sweeps and result emission.

mod config;
mod emit;
mod sweep;

pub use config::{
    apply_parameter, parse_config, parse_config_str, plan_to_json, ConfigError, ExperimentPlan,
    Mode, PathError, Series, SimSettings, Sweep, DEFAULT_MEASURED_CYCLES, SCHEMA_VERSION,
};
pub use emit::{figure_data, from_json, render, to_csv, to_json, EmitError, FigureId, Format};
pub use sweep::{run_sweep, ResultRow, SweepResults};
