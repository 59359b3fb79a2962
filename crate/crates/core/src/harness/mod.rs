//! Monte Carlo drivers, report serialization and the command-line
//! interface.

pub mod cli;
pub mod config;
pub mod report;
pub mod run;
pub mod stats;

pub use cli::cli_main;
pub use config::{ExperimentConfig, FineDtRule, ObservableConfig, ObservableKindConfig};
pub use report::{
    to_json_bytes, AveragingReport, ConvergenceReport, CsvTable, HolderRecord, HolderScalingReport,
};
pub use run::{
    holder_scaling_from_lifts, run_averaging_validation, run_convergence, run_holder_scaling,
};
