use std::io;

use thiserror::Error;

/// Errors raised across the search, training and geodesy pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("capacity exceeded: {cities} cities, exact solver limit is {limit}")]
    Capacity { cities: usize, limit: usize },

    #[error("numeric divergence: {0}")]
    Numeric(String),

    #[error("persistence error: {0}")]
    Persistence(String),

    #[error("shape mismatch in layer `{layer}`: expected {expected:?}, found {found:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("observation error: {0}")]
    Observation(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
