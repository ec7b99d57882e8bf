use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("empty reduction in {0}")]
    EmptyReduction(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGrad(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-positive depth at index {0}")]
    NonPositiveDepth(usize),
    #[error("scene error: {0}")]
    Scene(String),
    #[error("incomplete performance matrix, missing entries {0:?}")]
    IncompleteMatrix(Vec<(usize, usize)>),
    #[error("no valid pixels for depth evaluation")]
    NoValidPixels,
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
