use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("kernel divergence at t = {t} (V = {coupling}, alpha = {alpha})")]
    Divergence { coupling: f64, alpha: f64, t: f64 },

    #[error("singular population: spectral radius of WW+ is {radius} (must be < 1)")]
    SingularPopulation { radius: f64 },

    #[error("eigensolver did not converge within {max_iterations} sweeps for n = {n}")]
    EigenNonConvergence { n: usize, max_iterations: usize },

    #[error("integrator failure at t = {t}: {reason}")]
    Integrator { t: f64, reason: String },

    #[error("state has zero norm")]
    ZeroNorm,

    #[error("vanishing reference amplitude {amplitude:e}")]
    VanishingReference { amplitude: f64 },

    #[error("{n} qutrits exceeds the supported maximum of {max}")]
    TooLarge { n: usize, max: usize },

    #[error("degenerate ratio: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::SingularPopulation { .. }
                | Error::EigenNonConvergence { .. }
                | Error::Integrator { .. }
                | Error::ZeroNorm
                | Error::VanishingReference { .. }
                | Error::Degenerate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
