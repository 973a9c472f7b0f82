use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum PsrError {
    #[error("invalid grid resolution {0}: must be even and at least 4")]
    InvalidResolution(usize),

    #[error("point {index} at ({:.6}, {:.6}, {:.6}) lies outside the unit cube", point[0], point[1], point[2])]
    OutOfDomain { index: usize, point: [f64; 3] },

    #[error("{0} contains non-finite values")]
    NonFinite(&'static str),

    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("grid resolution mismatch: {0} vs {1}")]
    GridMismatch(usize, usize),

    #[error("degenerate indicator scale: |corner value| = {0:e} is below the guard")]
    DegenerateScale(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("the zero level set is empty")]
    EmptyMesh,

    #[error("reference solver refuses resolution {0} (limit is 16)")]
    ReferenceTooLarge(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("normal {index} is not unit length (norm {norm})")]
    NonUnitNormal { index: usize, norm: f64 },

    #[error("solve tape does not match the supplied cloud or grid")]
    TapeMismatch,

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("reconstruction aborted: {0}")]
    Aborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PsrError>;

impl PsrError {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        PsrError::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
