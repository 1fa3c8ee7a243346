use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("label {label} out of range for {classes} output classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("task index {t} out of range 1..={tasks}")]
    TaskOutOfRange { t: usize, tasks: usize },

    #[error("class {class_id} is not covered by the output head")]
    ClassNotInHead { class_id: usize },

    #[error("class supply exhausted: requested {requested}, available {available}")]
    ClassSupplyExhausted { requested: usize, available: usize },

    #[error("class leakage: probe class {0} already appears in the stream")]
    ClassLeakage(usize),

    #[error("replay set is empty")]
    EmptyReplay,

    #[error("stream mode mismatch: expected {expected}, got {actual}")]
    ModeMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
