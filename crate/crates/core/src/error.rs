use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("item index {index} out of range (vocab size {vocab})")]
    ItemOutOfRange { index: u32, vocab: u32 },

    #[error("parameter sets differ: {0}")]
    ParamMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset empty after preprocessing")]
    EmptyDataset,

    #[error("no negative items exist for user {user}: interactions cover the vocabulary")]
    NoNegatives { user: u32 },

    #[error("gradient check failed at {name}[{index}]: analytic {analytic:.6e}, numeric {numeric:.6e}")]
    GradCheck { name: String, index: usize, analytic: f64, numeric: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("training aborted at iteration {iteration}: {msg}")]
    TrainAborted { iteration: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
