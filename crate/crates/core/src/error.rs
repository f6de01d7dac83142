use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the domain of a special function or Dirichlet formula.
    #[error("{func}: argument {value} outside domain")]
    Domain { func: &'static str, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An accepted Newton step lowered the per-document objective. Only raised
    /// when `TrainConfig::check_ascent` is set.
    #[error("ascent check failed: objective went from {before} to {after}")]
    AscentViolation { before: f64, after: f64 },

    #[error("malformed {what} at line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
