//! Configuration, CSV formats and subcommands of the `latent-alpha` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod io;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed CSV content; `line` is 1-based and counts the header.
    #[error("{path}:{line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Core(#[from] latent_alpha::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub use commands::{cmd_calibrate, cmd_filter, cmd_simulate, Overrides};
pub use config::RunConfig;
