//! Error type shared by every stage of the inference pipeline.

use std::path::PathBuf;

use thiserror::Error;

/// Failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or inconsistent input data.
    Data,
    /// Invalid parameter or configuration value.
    Config,
    /// Non-finite intermediate values during a solve.
    Numerical,
}

impl ErrorKind {
    /// Process exit code for this failure class.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Data => 1,
            ErrorKind::Config => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch at line {line}: expected {expected} features, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite feature in point `{id}`")]
    NonFinite { id: String },

    #[error("label {label} of point `{id}` outside [0, {classes})")]
    Label {
        id: String,
        label: i64,
        classes: usize,
    },

    #[error("role error for point `{id}`: {message}")]
    Role { id: String, message: String },

    #[error("cannot normalize zero vector of point `{id}`")]
    ZeroVector { id: String },

    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    #[error("degenerate neighborhood at vertex {vertex}: all neighbor distances are zero")]
    DegenerateNeighborhood { vertex: usize },

    #[error("vertex {vertex} is isolated (zero degree)")]
    IsolatedVertex { vertex: usize },

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("insufficient pool capacity: {0}")]
    Capacity(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("episode {index} failed: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parameter(_) => ErrorKind::Config,
            Error::Numerical(_) => ErrorKind::Numerical,
            Error::Episode { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
