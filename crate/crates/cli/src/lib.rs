//! Command-line driver: dataset generation, pretraining, inversion and
//! reporting on top of `wfi-core`.

pub mod args;
pub mod commands;
mod guard;
pub mod report;

use thiserror::Error;

pub use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] wfi_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for usage and configuration errors, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_usage() => 2,
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Invert(a) => commands::invert(&a),
        Command::Report(a) => report::report(&a),
    }
}

/// Caps the global rayon pool from `WFI_WORKERS` when set.
pub fn init_workers() -> CliResult {
    let Ok(v) = std::env::var("WFI_WORKERS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("WFI_WORKERS={v} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))
}
