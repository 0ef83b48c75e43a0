use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("window of {kernel} exceeds input length {len}")]
    WindowTooLarge { kernel: usize, len: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward called without a completed forward pass")]
    NoForwardTrace,
    #[error("no trainable parameters")]
    NoTrainableParameters,
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("unsupported model format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("model shape mismatch: {0}")]
    ModelShape(String),
    #[error("line {line}: {cause}")]
    Parse { line: usize, cause: String },
    #[error("class {class} has {count} record(s); SMOTE needs at least 2")]
    TooFewForSmote { class: char, count: usize },
    #[error("invalid layer index {0}")]
    InvalidLayer(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
