use thiserror::Error;

use crate::shapley::Coalition;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters (feature counts, budgets, grid sizes, ranks).
    #[error("configuration error: {0}")]
    Config(String),

    /// Value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent user input (files, dimensions, rankings).
    #[error("input error: {0}")]
    Input(String),

    /// Input that is well-formed but carries no usable signal.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("bridge error: {0}")]
    Bridge(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("model lacks capability `{0}`")]
    Capability(String),

    #[error("game evaluation failed on coalition {coalition}: {source}")]
    Game {
        coalition: Coalition,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Model,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::Input(_)
            | Error::Io(_)
            | Error::Image(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorClass::Input,
            Error::Bridge(_) | Error::Protocol(_) | Error::Capability(_) => ErrorClass::Model,
            Error::Domain(_) | Error::Degenerate(_) | Error::Numerical(_) => {
                ErrorClass::Numerical
            }
            Error::Game { source, .. } => source.class(),
        }
    }
}
