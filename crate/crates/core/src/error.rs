//! Error types shared across the engine.

use thiserror::Error;

/// Errors produced by profile, modulus, density, parametrix and simulation
/// operations. Variants map onto the CLI exit codes: config/parse problems
/// exit 2, hypothesis-gate failures exit 3, statistics budget exit 4, and
/// numeric non-convergence exit 5.
#[derive(Error, Debug)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("indeterminate integral classification: {0}")]
    Indeterminate(String),

    #[error("numeric non-convergence: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("grid resolution error: {0}")]
    Resolution(String),

    #[error("series convergence error: {0}")]
    Convergence(String),

    #[error("hypothesis gate failure: {0}")]
    Gate(String),

    #[error("statistics budget error: {0}")]
    Statistics(String),

    #[error("accuracy budget exceeded: {0}")]
    Accuracy(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code convention used by the CLI harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 2,
            Error::Gate(_) => 3,
            Error::Statistics(_) => 4,
            Error::Numeric(_)
            | Error::Convergence(_)
            | Error::Indeterminate(_)
            | Error::Resolution(_)
            | Error::Accuracy(_) => 5,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
