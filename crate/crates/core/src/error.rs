use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Matrix failed the positive-definiteness check or another domain requirement.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("initialization failed: {0}; supply an explicit starting point")]
    Initialization(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    NumericalFailure {
        iteration: usize,
        message: String,
        trace: Vec<crate::estimator::IterRecord>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Singular(_)
                | Error::SimulationDiverged { .. }
                | Error::Initialization(_)
                | Error::NumericalFailure { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
