//! Batch front end: configuration files, controller artifacts, simulation
//! runs and their CSV, metric and plot outputs.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod output;

use ppm_control::Error;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PPM_OUT_DIR";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("synthesis infeasible: {0}")]
    Infeasible(String),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Certification(_) => 4,
            CliError::Runtime(_) => 5,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidParameter(_)
            | Error::Config(_)
            | Error::DimensionMismatch(_)
            | Error::EventOutOfRange(_)
            | Error::MissingChannel(_)
            | Error::InfeasibleSetpoint(_)
            | Error::NoDeloadSolution { .. }
            | Error::DegenerateCurve => CliError::Config(msg),
            Error::Infeasible(_) | Error::SolverFailure(_) => CliError::Infeasible(msg),
            Error::NonPhysicalState(_)
            | Error::NoConvergence(_)
            | Error::NotAnEquilibrium { .. }
            | Error::UnstableSystem { .. }
            | Error::InsufficientSamples(_) => CliError::Runtime(msg),
        }
    }
}
