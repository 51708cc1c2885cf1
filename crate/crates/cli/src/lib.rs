//! Command-line driver for the iVAEar pipeline: simulate, train, evaluate,
//! sweep, forecast and replicate.

pub mod commands;
pub mod config;
pub mod error;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

/// Environment variable holding the replicate worker count.
pub const THREADS_ENV: &str = "IVAEAR_THREADS";

/// Worker count from [`THREADS_ENV`]; unset, empty or zero means rayon's
/// default.
pub fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a count, got {v:?}")))?;
            Ok((n > 0).then_some(n))
        }
        Err(_) => Ok(None),
    }
}
