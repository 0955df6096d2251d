use thiserror::Error;

/// Errors raised across the modelling, synthesis and simulation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-physical state: {0}")]
    NonPhysicalState(String),

    #[error("equilibrium solve did not converge: {0}")]
    NoConvergence(String),

    #[error("setpoint infeasible: {0}")]
    InfeasibleSetpoint(String),

    #[error("operating point is not an equilibrium (residual {residual:.3e})")]
    NotAnEquilibrium { residual: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("LMI infeasible: {0}")]
    Infeasible(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("system is not stable (spectral abscissa {abscissa:.3e})")]
    UnstableSystem { abscissa: f64 },

    #[error("no deload solution at wind speed {wind_speed} m/s: {reason}")]
    NoDeloadSolution { wind_speed: f64, reason: String },

    #[error("degenerate deload curve: P_mopt equals P_mdel")]
    DegenerateCurve,

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("event out of range: {0}")]
    EventOutOfRange(String),

    #[error("missing channel `{0}`")]
    MissingChannel(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
