//! Command-line front end: JSON configs, run directories, experiment
//! drivers and the self-test.

// Validation uses negated comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;
pub mod run;
pub mod selftest;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("evaluation diverged: {0}")]
    Diverged(String),
    #[error("self-test failed: {0}")]
    SelfTest(String),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::SelfTest(_) => 1,
            CliError::Solver(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}
