use thiserror::Error;

/// Errors raised by the design, simulation and fitting routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("series did not converge: {0}")]
    NonConvergence(String),

    #[error("rectangle probability {estimate:.6} has error {error:.2e} above tolerance after {points} points")]
    AccuracyNotReached {
        estimate: f64,
        error: f64,
        points: usize,
    },

    #[error("correction matrix is degenerate (CV {cv} outside the approximation's range)")]
    DegenerateCorrection { cv: f64 },

    #[error("insufficient degrees of freedom: n = {n}, need more than {needed}")]
    InsufficientDf { n: usize, needed: usize },

    #[error("target unattainable: {0}")]
    Unattainable(String),

    #[error("power is not monotone in the design size around {at}")]
    NonMonotone { at: usize },

    #[error("cannot allocate {z_bar} of {n} clusters to treatment")]
    InfeasibleAllocation { n: usize, z_bar: f64 },

    #[error("observed information is singular")]
    SingularInformation,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// Numerical failures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence(_)
                | Error::AccuracyNotReached { .. }
                | Error::Unattainable(_)
                | Error::NonMonotone { .. }
                | Error::SingularInformation
                | Error::DegenerateCorrection { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Invalid(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
