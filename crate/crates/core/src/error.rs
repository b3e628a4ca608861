use thiserror::Error;

/// Errors raised by model construction, estimation and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing configuration keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: usize },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("estimate diverged in run {run} at step {step}: {what}")]
    Diverged { run: usize, step: usize, what: String },
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::MissingKeys(_) | Error::Dimension { .. }
        )
    }

    pub(crate) fn dim(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            found,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
