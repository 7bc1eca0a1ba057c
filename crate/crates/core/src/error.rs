use thiserror::Error;

use crate::conic::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("conic program error: {0}")]
    Program(String),

    #[error("conic solver returned {status:?} at iteration {iteration}")]
    Solver { iteration: usize, status: SolveStatus },

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn with_seed(self, seed: u64) -> Self {
        Error::Seed {
            seed,
            source: Box::new(self),
        }
    }

    /// True when the error (or the error it wraps) reports an infeasible problem instance.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible(_) => true,
            Error::Seed { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}
