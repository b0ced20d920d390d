use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("lattice needs {needed} points, budget is {budget}")]
    PointBudget { needed: usize, budget: usize },

    #[error("circulant embedding clipped {mass:.3e} of the spectral mass (threshold {threshold:.1e}); enlarge the extent")]
    Clipping { mass: f64, threshold: f64 },

    #[error("test function scale {lambda} is below the lattice resolution {h}")]
    Resolution { lambda: f64, h: f64 },

    #[error("singular kernel evaluation")]
    Singular,

    #[error("covariance matrix is not positive semidefinite")]
    NotPsd,

    #[error("no admissible reduction move: {0}")]
    Structural(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("monte carlo produced no hits; increase the sample count")]
    NoHits,
}

pub type Result<T> = std::result::Result<T, Error>;
