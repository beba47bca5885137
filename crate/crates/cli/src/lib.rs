//! Configuration-driven driver for decentralized stochastic approximation
//! experiments.
//!
//! Each command is a library function returning an [`Outcome`] whose `code`
//! is the process exit status: 0 success, 1 an assumption or certificate
//! failure, 2 an input error, 3 a divergent run. The `dsa` binary only
//! parses arguments and forwards to these functions.

pub mod commands;
pub mod config;

pub use commands::{cmd_bound, cmd_run, cmd_sweep, cmd_validate, cmd_verify, BoundArgs, RunArgs};
pub use config::{load_config, ExperimentConfig, LoadedConfig};

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("assumption {name} violated: {detail}")]
    Assumption { name: String, detail: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Assumption { .. } => EXIT_FAILED,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Input(msg) => msg.clone(),
            other => other.to_string(),
        }
    }
}

/// What a command printed and the status it exits with.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub text: String,
}

impl Outcome {
    fn new(code: i32, text: String) -> Self {
        Self { code, text }
    }
}
