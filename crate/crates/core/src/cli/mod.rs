//! Operator commands behind the `pamrl` binary: `train`, `eval`, `sweep`
//! and `export`.
//!
//! Run directory (`<out>/<variant>/seed<k>`): `config.snapshot` (the
//! resolved config in the input TOML format) plus everything
//! [`run_training`](crate::marl::run_training) writes. `eval` adds
//! `eval.csv` and `eval_trajectory.csv`/`eval_trajectory_ue.csv`.

mod commands;
pub mod config;
pub mod export;

pub use commands::{eval_run, run_dir, sweep, train_all, train_run, SweepRow, EVAL_FILE, SNAPSHOT_FILE, SWEEP_FILE};
pub use config::{Overrides, RunConfig, Variant};
pub use export::{export, ExportReport};

use crate::marl::MarlError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] MarlError),
    #[error("export: {0}")]
    Export(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration errors, 3 for a non-finite abort, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(MarlError::NonFinite { .. }) => 3,
            CliError::Run(MarlError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}
