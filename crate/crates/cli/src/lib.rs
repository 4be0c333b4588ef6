//! Library surface of the `dhen` binary: config parsing and the command
//! implementations, kept callable for integration tests.

pub mod commands;
pub mod config;

pub use commands::{cmd_compare, cmd_plan, cmd_simulate, cmd_train, DEFAULT_SWEEP};
pub use config::ExperimentConfig;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Model(#[from] dhen_core::ModelError),

    #[error(transparent)]
    Train(#[from] dhen_core::TrainError),

    #[error(transparent)]
    Plan(#[from] dhen_core::PlanError),

    #[error(transparent)]
    Sim(#[from] dhen_core::SimError),
}
