use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate lattice: cell volume {volume:e}")]
    DegenerateLattice { volume: f64 },

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("gauge violation: |Phi^* Xi|_F = {0:e}")]
    GaugeViolation(f64),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("operator is not positive definite on the tangent space (curvature {curvature:e})")]
    Indefinite { curvature: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
