use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("mesh is not watertight: odd crossing count in column ({x}, {y})")]
    NonWatertightMesh { x: usize, y: usize },

    #[error("mesh has neither texture coordinates with a texture nor vertex colors")]
    MissingColorSource,

    #[error("distance mask would hold {count} offsets, budget is {budget}")]
    MaskTooLarge { count: usize, budget: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("parse error in {what} at line {line}: {msg}")]
    Parse { what: String, line: usize, msg: String },

    #[error("image error: {0}")]
    Image(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(what: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { what: what.into(), line, msg: msg.into() }
    }

    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Image(_) => 2,
            Error::NonWatertightMesh { .. } => 3,
            Error::Config(_) | Error::MaskTooLarge { .. } => 4,
            Error::MissingColorSource | Error::InvalidMesh(_) | Error::Parse { .. } => 5,
        }
    }
}
