//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("time discretization must be positive, got {0}")]
    NonPositiveTimeStep(f64),

    #[error("no built-in stencil for derivative order {0}; supply one explicitly")]
    UnsupportedOrder(usize),

    #[error("invalid stencil: {0}")]
    InvalidStencil(String),

    #[error("time index {t} outside valid clique range 1..={max}")]
    TimeIndexOutOfRange { t: usize, max: usize },

    #[error("entry ({row}, {col}) lies outside the stored band (half-bandwidth {bandwidth})")]
    OutOfBand {
        row: usize,
        col: usize,
        bandwidth: usize,
    },

    #[error("matrix is not positive definite: nonpositive pivot at index {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("mass distribution is not realizable: derived diagonal entry {value} at axis {axis} is negative")]
    NonRealizableInertia { axis: usize, value: f64 },

    #[error("no frame named '{0}' on this chain")]
    UnknownFrame(String),

    #[error("invalid chain definition: {0}")]
    InvalidChain(String),

    #[error("no sampleable shape attached to this body")]
    UnsupportedShape,

    #[error("finite-difference Hessian breakdown: asymmetry {asymmetry:.3e} exceeds {limit:.3e} (bad step size?)")]
    FdAsymmetry { asymmetry: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 1 for configuration errors, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::InvalidChain(_)
            | Error::UnknownFrame(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
