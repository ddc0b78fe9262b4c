use alloc::string::String;

/// Errors raised by the core. Each variant maps to one failure class of the
/// public operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (samples {samples})")]
    NonFiniteLoss { epoch: usize, batch: usize, samples: String },
    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim(op: &'static str, detail: String) -> Error {
    Error::Dimension { op, detail }
}
