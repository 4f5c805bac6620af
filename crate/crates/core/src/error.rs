use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: usize },

    #[error("class id {class_id} out of range for {num_classes} classes")]
    ClassOutOfRange { class_id: usize, num_classes: usize },

    #[error("loss must be a scalar, got shape {0}")]
    NonScalarLoss(String),

    #[error("graph spec parse error at line {line}: {msg}")]
    SpecParse { line: usize, msg: String },

    #[error("invalid graph spec at layer {layer}: {msg}")]
    SpecInvalid { layer: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite gradient for parameter {path}")]
    NonFiniteGradient { path: String },

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
