use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Modality;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("no modality available")]
    NoModality,
    #[error("modality {0} is not present")]
    MissingModality(Modality),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter trees differ: {0}")]
    StructureMismatch(String),
    #[error("undefined: {0}")]
    Undefined(String),
}

impl Error {
    pub(crate) fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
