use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("positions do not form a permutation of 1..={0}")]
    NotAPermutation(usize),

    #[error("indicator is invalid: {0}")]
    InvalidIndicator(String),

    #[error("partial ranks must form a permutation of 1..=k over the ranked subset")]
    InvalidPartial,

    #[error("entity sets differ ({left} vs {right} entities)")]
    EntityMismatch { left: usize, right: usize },

    #[error("decomposition is incompatible: {0}")]
    Incompatible(String),

    #[error("count overflows the integer range")]
    CountOverflow,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("external results for method `{method}` are missing replicate {replicate}")]
    MissingExternalReplicate { method: String, replicate: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
