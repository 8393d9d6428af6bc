//! Seeded sweeps over the `(variant, n_g, seed)` grid and their CSV outputs.

mod config;
pub mod metrics;
mod runner;

pub use config::ExperimentConfig;
pub use metrics::{mann_kendall, mean_stderr, moving_average, summarize, Failure, MannKendall, MetricRow, SummaryRow};
pub use runner::{
    prepare_output_dir, run_experiment, run_seed, run_single, schedule, write_outputs, write_traces, ExperimentResult, RunRecord, RunSpec,
};
