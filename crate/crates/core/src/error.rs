use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure raised by a black-box fitness evaluator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitnessError {
    #[error("fitness value is not finite: {0}")]
    NonFinite(f64),
    #[error("design has length {got}, evaluator expects {expected}")]
    Dim { expected: usize, got: usize },
    #[error("solver failure: {0}")]
    Solver(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("step {t} outside schedule range 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("fitness evaluation failed{}{}: {source}",
        .step.map(|t| format!(" at step {t}")).unwrap_or_default(),
        .sample.map(|i| format!(" on sample {i}")).unwrap_or_default())]
    Fitness {
        step: Option<usize>,
        sample: Option<usize>,
        #[source]
        source: FitnessError,
    },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    /// Attach a denoising step to a fitness error that lacks one.
    pub fn at_step(self, t: usize) -> Self {
        match self {
            Error::Fitness { step: None, sample, source } => Error::Fitness { step: Some(t), sample, source },
            other => other,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, got })
    }
}
