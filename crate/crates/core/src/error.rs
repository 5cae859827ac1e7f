use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, got {got:?} but expected {expected:?}")]
    Shape {
        op: &'static str,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite learning rate {0}")]
    NonFiniteLr(f64),
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("sequence length {len} exceeds the maximum kernel length {max}; run the sequence in chunks")]
    KernelTooLong { len: usize, max: usize },
    #[error("horizon {requested} exceeds the configured maximum {max}")]
    HorizonTooLong { requested: usize, max: usize },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, got: &[usize], expected: &[usize]) -> Error {
    Error::Shape {
        op,
        got: got.to_vec(),
        expected: expected.to_vec(),
    }
}
