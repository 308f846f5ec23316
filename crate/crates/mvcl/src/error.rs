//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input text is empty after trimming.
    #[error("empty document: {0}")]
    EmptyDocument(String),

    /// A record in a newline-delimited input file failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A reference (triple id, annotation id, ...) does not resolve, or a
    /// cross-record invariant is violated.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Tensor operands are shape-incompatible for an op.
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An API precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A requested id is missing from an embedding fixture.
    #[error("fixture miss: {0}")]
    FixtureMiss(String),

    /// A file is structurally valid JSON but violates the format contract
    /// (ragged rows, dimension mismatch, bad shapes).
    #[error("format error: {0}")]
    Format(String),

    /// Training data contains a single class.
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    /// A configuration value is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// An input exceeds a hard size guard.
    #[error("size guard: {0}")]
    SizeGuard(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
