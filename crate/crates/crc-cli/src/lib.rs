//! Library side of the `crc` command-line tool: run configuration,
//! artifact layout, and the command implementations. The binary in
//! `main.rs` is a thin argument-parsing shell over this.

pub mod artifacts;
pub mod commands;
pub mod config;

/// Process exit discipline: 0 success, 1 domain error, 2 usage error.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }

    pub fn domain(err: impl std::fmt::Display) -> Self {
        CliError::Domain(err.to_string())
    }

    pub fn usage(err: impl std::fmt::Display) -> Self {
        CliError::Usage(err.to_string())
    }
}
