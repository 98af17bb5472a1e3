use thiserror::Error;

pub type Result<T, E = AutogradError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutogradError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("buffer of length {len} cannot hold shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape was already consumed by an earlier backward pass")]
    TapeConsumed,
    #[error("variable does not belong to this tape")]
    ForeignVar,
}

impl AutogradError {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        AutogradError::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub fn shapes(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        AutogradError::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
