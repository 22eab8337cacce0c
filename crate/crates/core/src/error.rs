use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value {value:?} in column `{column}` at row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { row: usize, column: String },

    #[error("fewer than 2 usable rows (found {0})")]
    TooFewRows(usize),

    #[error("duplicate location id `{0}`")]
    DuplicateId(String),

    #[error("unknown location id `{0}`")]
    UnknownId(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-positive value {value} at row `{id}`; log transform needs strictly positive input")]
    NonPositive { id: String, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite; retry with a ridge fallback")]
    NotPositiveDefinite,

    #[error("cluster {cluster} has {size} members, needs at least {needed}")]
    ClusterTooSmall {
        cluster: usize,
        size: usize,
        needed: usize,
    },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("self-loop on location `{0}`")]
    SelfLoop(String),

    #[error("spectral radius of W is {estimate:.6} ({method}); (I - W) must be safely invertible")]
    SpectralRadius { estimate: f64, method: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("reference solver diverged after {0} step halvings")]
    OracleDiverged(usize),

    #[error("singular system: {0}")]
    Singular(String),
}

impl Error {
    /// Name of the module that produces this class of error, used by the
    /// CLI to prefix diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::MissingColumn(_)
            | Error::NonNumeric { .. }
            | Error::MissingValue { .. }
            | Error::TooFewRows(_)
            | Error::DuplicateId(_)
            | Error::UnknownColumn(_)
            | Error::NonPositive { .. } => "dataset",
            Error::ClusterTooSmall { .. } => "dataset",
            Error::NotPositiveDefinite | Error::NonFinite(_) | Error::Singular(_) => "numerics",
            Error::UnknownId(_) | Error::SelfLoop(_) => "sar_fixed",
            Error::SpectralRadius { .. } | Error::IndexOutOfRange(_) => "spillover",
            Error::OracleDiverged(_) => "synth",
            Error::InvalidConfig(_) | Error::DimensionMismatch(_) => "config",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
