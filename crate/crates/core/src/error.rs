use thiserror::Error;

/// Errors raised by the latent-alpha library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate filter: {0}")]
    DegenerateFilter(String),

    /// The α→∞ control is singular at the horizon.
    #[error("singular horizon: control evaluated at t={t} with horizon T={horizon}")]
    SingularHorizon { t: f64, horizon: f64 },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("step size too large: intensity*dt = {0} >= 1")]
    StepSize(f64),

    #[error("simulation diverged at step {0}")]
    SimulationDiverged(usize),

    #[error("undefined baseline: AC terminal cash is zero")]
    UndefinedBaseline,

    #[error("data format error: {0}")]
    DataFormat(String),

    /// Observation with zero probability under every latent state.
    #[error("impossible observation at step {step}")]
    ImpossibleObservation { step: usize },

    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
