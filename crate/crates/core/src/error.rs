use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid span {start}..{end} for {len} steps")]
    Span { start: usize, end: usize, len: usize },

    #[error("optimizer: parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("input: {0}")]
    Input(String),

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("data: {0}")]
    Data(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("run (fold {fold}, seed {seed}): {source}")]
    Run {
        fold: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("capability: {0}")]
    Capability(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
