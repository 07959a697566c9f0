use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("polygon is not star-shaped with respect to its centroid")]
    NotStarShaped,

    #[error("{what} out of range: {value} (allowed {allowed})")]
    OutOfRange {
        what: &'static str,
        value: i64,
        allowed: String,
    },

    #[error("unsupported quadrature degree {0} (maximum is 30)")]
    UnsupportedQuadratureDegree(usize),

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("tensor is not symmetric (off-diagonal mismatch {0:e})")]
    NotSymmetric(f64),

    #[error("incompatible Neumann data: rigid-motion residual {0:e}")]
    Incompatible(f64),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
