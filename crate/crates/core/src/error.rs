use thiserror::Error;

use crate::integrator::ConvergenceReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quadrature did not reach tolerance {tolerance:e} (estimated error {estimate:e})")]
    NonConvergent { tolerance: f64, estimate: f64 },

    #[error("{what} diverges at t = 0 for this spectral density")]
    Divergent { what: String },

    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),

    #[error("Matsubara frequency {n} coincides with the cutoff frequency")]
    PoleCollision { n: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("hierarchy needs {required} bytes but the memory budget is {budget} bytes")]
    CapacityExceeded { required: u128, budget: u128 },

    #[error("bad initial state: {0}")]
    BadInitialState(String),

    #[error("numerical blow-up at t = {time}: entry magnitude {magnitude:e}")]
    NumericalBlowup { time: f64, magnitude: f64 },

    #[error("depth schedule did not converge to tolerance {tol:e}")]
    NotConverged { tol: f64, report: Box<ConvergenceReport> },

    #[error("only {survivors} of {requested} trajectories survived")]
    TooFewSurvivors { survivors: usize, requested: usize },
}
