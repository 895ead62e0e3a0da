use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        kind: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{kind}: expected {expected} operand(s), got {got}")]
    Arity {
        kind: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("tensor shape {shape:?} does not match {len} values")]
    BadTensor { shape: Vec<usize>, len: usize },

    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("{0}: vector norm below 1e-12")]
    ZeroNorm(&'static str),

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("finite-difference step {0} outside (0, 1e-2]")]
    InvalidStep(f64),

    #[error("token id {id} at position {index} is out of range for vocabulary of {vocab}")]
    TokenOutOfRange { index: usize, id: usize, vocab: usize },

    #[error("empty token sequence")]
    EmptyPrompt,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("malformed feature file at byte {offset}: {msg}")]
    FeatureFormat { offset: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
