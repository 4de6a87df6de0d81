//! Batch front-end: configs in, CSV and JSON artifacts out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod manifest;
pub mod run;
pub mod summary;

pub use config::{Command, RunConfig};
pub use run::{execute, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("some scan tasks failed: {0}")]
    PartialScan(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::PartialScan(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<tdscha_core::Error> for CliError {
    fn from(e: tdscha_core::Error) -> Self {
        use tdscha_core::Error as E;
        match e {
            E::Parse { .. }
            | E::InvalidParameter(_)
            | E::InvalidTensor(_)
            | E::DimensionMismatch { .. }
            | E::NotSymmetric { .. }
            | E::NoDoubleWell { .. }
            | E::MissingEffectiveCharges
            | E::Json(_) => CliError::Config(e.to_string()),
            E::Io(io) => CliError::Io(io),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
