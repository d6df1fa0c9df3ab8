//! Front end for the `ntvcbf` binary: run configuration, commands and artifacts.
//!
//! Exit codes: 0 success, 1 training did not converge or the certificate is
//! invalid, 2 the sampled safe set is empty, 64 configuration or usage
//! error, 65 unreadable data, model or trajectory file.

pub mod commands;
pub mod config;
pub mod runlog;

use thiserror::Error;

pub use commands::{robustness, simulate, train, verify, SimulateArgs, VerifyArgs};
pub use config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED: u8 = 1;
pub const EXIT_UNSATISFIABLE: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_DATA: u8 = 65;

/// Environment variable that sets the worker count.
pub const THREADS_ENV: &str = "NTVCBF_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Unsatisfiable(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Unsatisfiable(_) => EXIT_UNSATISFIABLE,
        }
    }
}

/// Builds the global worker pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))
}
