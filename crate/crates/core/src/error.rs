use thiserror::Error;

use crate::types::{ScoreKind, Span};

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("text `{id}` is empty after trimming")]
    EmptyText { id: String },
    #[error("duplicate text id `{0}`")]
    DuplicateId(String),
    #[error("expected a {expected} vector, found {found}")]
    InvalidViewKind { expected: ScoreKind, found: ScoreKind },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector has zero norm")]
    DegenerateVector,
    #[error("invalid softmax vector: {0}")]
    InvalidSoftmax(String),
    #[error("span [{}, {}) outside text of {len} characters", span.start, span.end)]
    SpanOutOfBounds { span: Span, len: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
