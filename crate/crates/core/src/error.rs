use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("width mismatch in {context}: expected {expected}, got {actual}")]
    Width {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("unknown task id {0}")]
    UnknownTask(usize),

    #[error("no robot experience for the requested tasks; collect rollouts first")]
    EmptyBuffer,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("format version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {loss} loss is not finite")]
    Diverged { epoch: usize, loss: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_width(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Width {
            context,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context.to_owned()))
    }
}
