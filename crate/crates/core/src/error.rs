use thiserror::Error;

/// Errors raised anywhere in the observability pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion is not unit norm (|q| = {norm})")]
    NonUnitQuaternion { norm: f64 },

    #[error("rotation axis has zero length")]
    ZeroAxis,

    #[error("expected a vector of length {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("landmark {id}: camera ray length {length:e} is degenerate")]
    DegenerateGeometry { id: u32, length: f64 },

    #[error("landmark {id} is behind the camera (depth {depth:e})")]
    BehindCamera { id: u32, depth: f64 },

    #[error("Lie-derivative order {order} exceeds the supported maximum {max}")]
    OrderOverflow { order: usize, max: usize },

    #[error("row {label}: {source}")]
    Row { label: String, source: Box<Error> },

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown scenario id `{0}`")]
    UnknownScenario(String),

    #[error("filter diverged at t = {time} s (minimum covariance eigenvalue {min_eigenvalue:e})")]
    Divergence { time: f64, min_eigenvalue: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the command-line front end: 2 for anything the
    /// user can fix in the configuration, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownScenario(_) | Error::Io { .. } => 2,
            Error::InvalidRequest(_) | Error::OrderOverflow { .. } | Error::ZeroAxis => 2,
            _ => 3,
        }
    }
}
