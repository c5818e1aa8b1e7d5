//! Experiment configuration, presets and replicate orchestration.

mod config;
pub mod presets;
mod runner;

pub use config::{load_config, ExperimentConfig, FilterConfig, LrConfig, SchedulerKind, TimingConfig, SCHEMA_VERSION};
pub use runner::{
    emit_plot_data, fmt_real, replicate_seed, run_experiment, run_replicates, write_configs, write_trace_csv,
    Aggregate, Aggregates, ExperimentReport, PlotMetric, ReplicateResult, CSV_HEADER,
};
