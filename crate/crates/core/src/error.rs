use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} is not symmetric (max deviation {deviation:.3e})")]
    NotSymmetric { what: &'static str, deviation: f64 },

    #[error("{what} is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { what: &'static str, min_eigenvalue: f64 },

    #[error("unstable curvature: eigenvalue {eigenvalue:.6e} of mode {mode} is not positive")]
    UnstableCurvature { mode: usize, eigenvalue: f64 },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("no double well on mode {mode}: phi = {phi:.6e}, psi = {psi:.6e}")]
    NoDoubleWell { mode: usize, phi: f64, psi: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mode basis carries no effective charges")]
    MissingEffectiveCharges,

    #[error("no stable SCHA solution: {0}")]
    NoStableSolution(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Integration(#[from] Box<crate::dynamics::IntegrationFailure>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { what, expected, found });
    }
    Ok(())
}
