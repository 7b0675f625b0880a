use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid system: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidSystem(Vec<crate::model::Violation>),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("closure error: {0}")]
    Closure(String),

    #[error("basis linearly dependent: Gram matrix {what} has eigenvalues in [{min_eig:e}, {max_eig:e}]")]
    NotPositiveDefinite { what: String, min_eig: f64, max_eig: f64 },

    #[error(
        "approximated functions lie in span(h) on interval {interval}: error Gram min eigenvalue {min_eig:e}; move them from phi to varphi or f"
    )]
    ApproxInSpan { interval: usize, min_eig: f64 },

    /// An LMI expression multiplied two decision-variable dependent operands.
    #[error("bilinear product in affine expression: {0}")]
    Bilinear(String),

    #[error("solver environment error: {0}")]
    Environment(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("simulation config error: {0}")]
    SimConfig(String),

    #[error("simulation diverged at t = {t}")]
    Diverged { t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
