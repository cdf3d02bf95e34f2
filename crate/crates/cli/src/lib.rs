//! Command-line experiments for `hinfopt`: JSON configs in, CSV/JSON/SVG
//! artifacts out.

pub mod config;
pub mod error;
pub mod svg;
pub mod tasks;

pub use config::{parse_config, parse_config_file, parse_config_value, ExperimentConfig, Task};
pub use error::CliError;
pub use tasks::{run_experiment, ExperimentReport};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "HINFOPT_THREADS";

/// Configures the global rayon pool from the config and `HINFOPT_THREADS`;
/// the smaller of the two wins when both are set.
pub fn init_threads(requested: Option<usize>) -> Result<(), CliError> {
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
    let n = match (requested, cap) {
        (Some(a), Some(b)) => a.min(b),
        (a, b) => match a.or(b) {
            Some(n) => n,
            None => return Ok(()),
        },
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::ThreadPool(e.to_string()))
}
