use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("example {id} was already stepped this epoch")]
    DuplicateExample { id: usize },

    #[error("example id {id} out of range for {n} examples")]
    ExampleOutOfRange { id: usize, n: usize },

    #[error("epoch incomplete: {missing} of {n} examples not yet stepped")]
    IncompleteEpoch { missing: usize, n: usize },

    #[error("recursive pair balance needs a power-of-2 batch size, got {batch}")]
    BatchNotPowerOfTwo { batch: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid label {label} for {what}")]
    InvalidLabel { label: f64, what: &'static str },

    #[error("not a permutation: {0}")]
    InvalidPermutation(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
