use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A delimited input file failed to parse; line numbers are 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at episode {episode}: loss {loss:.3e} exceeds the abort threshold")]
    Diverged { episode: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
