use thiserror::Error;

/// Errors produced by the grammar, chart, decoding and training routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid support tree config: {0}")]
    InvalidConfig(String),

    #[error("node index {index} out of range for a tree with {node_count} nodes")]
    IndexOutOfRange { index: usize, node_count: usize },

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite parameter in {0}")]
    NonFinite(&'static str),

    #[error("split weight rho[{index}] = {value} is outside [0, 1]")]
    InvalidSplit { index: usize, value: f64 },

    #[error(
        "token id {token} at position {position} is outside the vocabulary of size {vocab_size}"
    )]
    TokenOutOfRange {
        token: usize,
        position: usize,
        vocab_size: usize,
    },

    #[error("empty sentence")]
    EmptySentence,

    #[error("grammar is degenerate: the start symbol derives no string")]
    DegenerateGrammar,

    #[error("sentence has no derivation under the grammar")]
    Underivable,

    #[error("sentence {index} has no derivation under the grammar")]
    UnderivableInCorpus { index: usize },

    #[error("no derivable length in [{min}, {max}]")]
    NoDerivableLength { min: usize, max: usize },

    #[error("rule table is not normalized: {0}")]
    NotNormalized(String),

    #[error("enumeration would produce {count} trees, above the cap of {cap}")]
    CapExceeded { count: u128, cap: u128 },

    #[error("{0}")]
    Unsupported(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown token {token:?}")]
    UnknownToken { line: usize, token: String },

    #[error("malformed parameter file: {0}")]
    ParamFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
