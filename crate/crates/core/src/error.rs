use thiserror::Error;

use crate::lp::LpStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid popularity vector: {0}")]
    InvalidPopularity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Exhaustive enumeration would exceed the configured guard
    /// (`CCOPT_MAX_ENUM`, default 10^6).
    #[error("enumeration of {required} cases exceeds the limit of {limit} (set CCOPT_MAX_ENUM to override)")]
    EnumerationLimit { required: u128, limit: u128 },

    #[error("instance too large for {what}: {detail}")]
    TooLarge { what: &'static str, detail: String },

    #[error("operation requires uniform file popularity")]
    NonUniformPopularity,

    #[error("parameter is not monotone in popularity: file {file}, type {ty}")]
    NotMonotone { file: usize, ty: usize },

    #[error("linear program is malformed: {0}")]
    MalformedLp(String),

    #[error("linear program did not reach an optimum: {0:?}")]
    LpNotOptimal(LpStatus),

    #[error("no feasible solution among {runs} runs")]
    NoFeasibleRun { runs: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
