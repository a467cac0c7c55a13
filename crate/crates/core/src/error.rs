use thiserror::Error;

use crate::filter::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed CSV at line {line}: {message}")]
    Structure { line: u64, message: String },
    #[error("input contains no data rows")]
    EmptyInput,
    #[error("invalid input encoding: {0}")]
    Encoding(String),
    #[error("duplicate feature name `{0}`")]
    DuplicateName(String),
    #[error("unknown feature name(s): {}", .0.join(", "))]
    UnknownNames(Vec<String>),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("type mismatch: {0}")]
    Type(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid distance matrix: {0}")]
    DistanceMatrix(String),
    #[error("statistical test undefined: {0}")]
    UndefinedTest(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("computation cancelled")]
    Cancelled,
}
