//! Std side of aplab: file formats, multi-threaded drivers over the core
//! algorithms, fit artifacts and the `aplab` command line.
//!
//! The numerical work lives in [`aplab_core`]; everything here is plumbing
//! that needs an operating system.

use std::io;
use std::path::Path;

pub mod artifacts;
pub mod cli;
pub mod formats;
pub mod manifest;
pub mod parallel;

pub use aplab_core as core;

/// Version stamped into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

/// Command failures, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    BadInput(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }

    pub fn csv(path: &Path, e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Self::io(path, source),
            other => Error::BadInput(format!("{}: {other:?}", path.display())),
        }
    }

    /// Process exit status: 2 bad input, 3 fit failure, 4 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BadInput(_) => 2,
            Error::Fit(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}
