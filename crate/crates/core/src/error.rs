use thiserror::Error;

/// Errors produced by the precoding library.
#[derive(Debug, Error)]
pub enum TpeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid CSI parameter tau={0} (must lie in [0, 1])")]
    InvalidTau(f64),

    #[error("nonpositive power weight p[{index}] = {value}")]
    NonpositivePower { index: usize, value: f64 },

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("regularization fixed point did not converge; last iterates {trace:?}")]
    RegularizationNonConvergence { trace: Vec<f64> },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<TpeError>,
    },

    #[error("coherence period too short for pilots: T_data = {0}")]
    NegativeDataSymbols(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TpeError {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config_error(&self) -> bool {
        match self {
            TpeError::InvalidConfig(_)
            | TpeError::InvalidTau(_)
            | TpeError::NonpositivePower { .. }
            | TpeError::InvalidCovariance(_)
            | TpeError::NegativeDataSymbols(_)
            | TpeError::Dimension(_)
            | TpeError::Json(_) => true,
            TpeError::Trial { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, TpeError>;
