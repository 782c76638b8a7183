use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CdstError>;

#[derive(Debug, Error)]
pub enum CdstError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("unknown domain-slot `{0}`")]
    UnknownSlot(String),

    #[error("slot inventory mismatch: {0}")]
    InventoryMismatch(String),

    #[error("span error: {0}")]
    Span(String),

    #[error("invalid span prediction: {0}")]
    InvalidSpan(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite loss at step {step} (batch {batch:?}): slot_type={slot_type} span={span} total={total}")]
    NonFiniteLoss {
        step: usize,
        batch: Vec<String>,
        slot_type: f64,
        span: f64,
        total: f64,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl CdstError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CdstError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short name for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            CdstError::Io { .. } => "io",
            CdstError::Json { .. } => "json",
            CdstError::MissingInput(_) => "missing-input",
            CdstError::UnknownSlot(_) => "unknown-slot",
            CdstError::InventoryMismatch(_) => "inventory-mismatch",
            CdstError::Span(_) => "span",
            CdstError::InvalidSpan(_) => "invalid-span",
            CdstError::Encoding(_) => "encoding",
            CdstError::Tokenizer(_) => "tokenizer",
            CdstError::Dimension { .. } => "dimension",
            CdstError::Config(_) => "config",
            CdstError::Invalid(_) => "invalid",
            CdstError::NonFiniteLoss { .. } => "non-finite-loss",
            CdstError::Tensor(_) => "tensor",
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        CdstError::Json {
            context: context.into(),
            source,
        }
    }
}
