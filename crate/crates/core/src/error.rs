use thiserror::Error;

/// Errors raised anywhere in the imputation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular design: the predictor columns are linearly dependent")]
    SingularDesign,

    #[error("insufficient data: {n_obs} observed rows, need more than {min_exclusive}")]
    InsufficientData { n_obs: usize, min_exclusive: usize },

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("degenerate missingness scores: the weighted predictor sum has zero variance")]
    DegenerateScores,

    #[error("cell {cell}, replication {replication}: {source}")]
    Replication {
        cell: String,
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
