//! Library behind the `qlab` binary: records, sweep configs, writers and
//! subcommands.

pub mod commands;
pub mod config;
pub mod num;
pub mod output;
pub mod records;

use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Model(#[from] qlab::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 usage or config, 3 numeric domain, 4 no threshold, 1 io.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Model(qlab::Error::NoThreshold { .. }) => 4,
            CliError::Model(_) => 3,
            CliError::Io(_) => 1,
        })
    }
}
