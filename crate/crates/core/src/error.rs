use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("Langevin chain {chain} diverged at step {step}")]
    Diverged { chain: usize, step: usize },
    #[error("training aborted at iteration {iteration}: non-finite {term}")]
    TrainingAborted { iteration: u64, term: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),
    #[error("invalid index: {0}")]
    Index(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFinite { what: what.into() }
    }
}
