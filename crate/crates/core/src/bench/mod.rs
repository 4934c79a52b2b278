//! Experiment harness: metrics, references, closed-loop runs, the horizon
//! sweep, configuration, and the command-line front end.

pub mod cli;
mod config;
mod experiment;
mod metrics;
mod pipeline;
mod reference;

pub use config::{parse_kv, ExperimentConfig};
pub use experiment::{
    closed_loop, gelfand_radius_bound, run_eval_model, run_horizon_sweep, run_scenario, run_stabilize, run_track,
    sweep_csv, test_records, Controller, ControllerKind, ExperimentSpec, Scenario, SweepRow, Trajectory, SCORED,
};
pub use metrics::{mse, percentile, r_squared, r_squared_multi, Metrics};
pub use pipeline::{execution, generate_data, initial_model, train_on, Manifest};
pub use reference::{Lissajous, Reference, StepSchedule};
