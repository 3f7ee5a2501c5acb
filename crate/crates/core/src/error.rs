use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlowError>;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("edge ({src}, {dst}) does not exist in this snapshot")]
    MissingEdge { src: usize, dst: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("embedding file does not match the node universe: {0}")]
    EmbeddingMismatch(String),

    #[error("single-class input: no {0} labels")]
    SingleClass(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("infeasible generator settings: {0}")]
    Infeasible(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FlowError {
    /// Short machine-readable tag used in structured CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            FlowError::Parse { .. } => "parse",
            FlowError::EmptyDataset(_) => "empty_dataset",
            FlowError::DimensionMismatch(_) => "dimension_mismatch",
            FlowError::InvalidArgument(_) => "invalid_argument",
            FlowError::MissingEdge { .. } => "missing_edge",
            FlowError::InsufficientData(_) => "insufficient_data",
            FlowError::EmbeddingMismatch(_) => "embedding_mismatch",
            FlowError::SingleClass(_) => "single_class",
            FlowError::NonFinite(_) => "non_finite",
            FlowError::Infeasible(_) => "infeasible",
            FlowError::Config(_) => "config",
            FlowError::Checkpoint(_) => "checkpoint",
            FlowError::Io(_) => "io",
            FlowError::Csv(_) => "csv",
            FlowError::Json(_) => "json",
        }
    }
}
