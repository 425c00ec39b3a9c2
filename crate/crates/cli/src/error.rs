use std::path::PathBuf;

use outpaint4d_core::update::UpdateError;
use outpaint4d_core::{BridgeError, FormatError, GeometryError};
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const VALIDATION: u8 = 2;
    pub const BRIDGE: u8 = 3;
    pub const IO: u8 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Validation(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("outpaint bridge failed: {0}")]
    Bridge(#[from] BridgeError),
    #[error("{0} oracle violation(s)")]
    OracleFailed(usize),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Format(FormatError::Io { .. }) => exit::IO,
            CliError::Bridge(_) => exit::BRIDGE,
            _ => exit::VALIDATION,
        }
    }
}

impl From<UpdateError> for CliError {
    fn from(e: UpdateError) -> Self {
        match e {
            UpdateError::Geometry(g) => CliError::Geometry(g),
            UpdateError::Bridge(b) => CliError::Bridge(b),
        }
    }
}
