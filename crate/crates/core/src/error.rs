// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the steering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An intervention hook produced an unusable residual.
    #[error("intervention error: {0}")]
    Intervention(String),

    /// A dataset line failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Parsed data violated a cross-record invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A prompt template could not be rendered.
    #[error("template error: {0}")]
    Template(String),

    /// Experiment configuration is incomplete or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint file is malformed or does not match expectations.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 = configuration, 3 = data, 4 = checkpoint. Argument errors count as
    /// configuration problems since they originate from user-supplied values.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::InvalidArgument(_) | Self::Template(_) => 2,
            Self::Parse { .. } | Self::Validation(_) | Self::Io { .. } => 3,
            Self::Checkpoint(_) => 4,
            Self::Intervention(_) => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
