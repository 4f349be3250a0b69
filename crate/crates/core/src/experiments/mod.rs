//! Experiment configuration, runners, CSV output and aggregation.

mod aggregate;
mod config;
mod records;
mod runners;

pub use aggregate::{aggregate_quantiles, quantile_column, quantile_sorted};
pub use config::{default_stepsize_grid, ExperimentConfig, ExperimentKind};
pub use records::{format_float, read_records, records_to_string, write_records, RunRecord, CSV_HEADER};
pub use runners::{
    build_target, defensive_proposal, kernel_label, optimize, run_experiment, run_gaussian_convergence,
    run_gradient_variance, run_stepsize_sweep, run_variance_simulation, run_with_threads, Checkpoint, RunSetup,
    RunSummary, Trajectory, DIVERGENCE_KL,
};
