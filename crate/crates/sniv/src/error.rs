use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("polynomial degree {found} exceeds the ambient bound {bound}")]
    DegreeOverflow { found: usize, bound: usize },

    #[error("relaxation level {h} too small: constraint needs level {needed}")]
    LevelTooSmall { h: usize, needed: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("numerical failure in SDP solve: {0}")]
    Solver(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
