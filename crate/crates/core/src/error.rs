use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid transition matrix: {0}")]
    InvalidTransitionMatrix(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} outside valid range [{min}, {max}]")]
    IndexOutOfRange { index: i64, min: i64, max: i64 },

    #[error("dataset carries no ground truth")]
    TruthMissing,

    #[error("state bound exceeded at k = {k}: |x| = {value} > {bound}")]
    StateBoundExceeded { k: i64, value: f64, bound: f64 },

    #[error("minimum of the sigma objective is not bracketed by the grid (minimizer at sigma_max = {sigma_max})")]
    SigmaNotBracketed { sigma_max: f64 },

    #[error("only {found} distinguishable gradient clusters, expected {expected}")]
    DegenerateClusters { found: usize, expected: usize },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("no snippet of length {n_l} fits in {len} samples")]
    NoSnippetFits { len: usize, n_l: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
