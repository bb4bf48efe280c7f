use std::fmt;

/// Shape of a matrix or tensor, used in error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub usize, pub usize);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dimension {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value in parameter `{name}`")]
    Numeric { name: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("corpus integrity error: {0}")]
    Corpus(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("missing precomputed vector for essay `{essay}`, sentence {sentence}, token {token}")]
    Coverage {
        essay: String,
        sentence: u32,
        token: u32,
    },
    #[error("training diverged at epoch {epoch}; model holds the last finite parameters")]
    Diverged { epoch: usize },
    #[error("all {} learning-rate trials failed: {}", .0.len(), .0.join("; "))]
    SearchFailed(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
