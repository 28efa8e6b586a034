//! Error taxonomy shared by every module.
//!
//! The variants map onto the CLI's exit codes, so the kind of a failure
//! matters as much as its message: configuration problems, bad input data,
//! shape violations, numeric blow-ups and checkpoint corruption are all
//! distinguishable by the caller.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: unknown variant, bad fractions, bad flags.
    #[error("configuration error: {0}")]
    Config(String),

    /// Array dimensions violate an operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input data is missing, undecodable or semantically invalid.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Optimizer state does not line up with the network parameters.
    #[error("optimizer state error: {0}")]
    State(String),

    /// Skyline comparison had no column defined in both vectors.
    #[error("skyline vectors share no defined columns")]
    NoOverlap,

    /// Checkpoint file exists but cannot be parsed.
    #[error("corrupt checkpoint container: {0}")]
    CorruptCheckpoint(String),

    /// Checkpoint parsed but its arrays do not match the embedded spec.
    #[error("checkpoint/spec mismatch: {0}")]
    CheckpointMismatch(String),

    /// Training produced a non-finite loss. Parameters from the last
    /// completed step are preserved in the attached checkpoint.
    #[error("training diverged at epoch {epoch}, step {step} (loss {loss})")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
        last_good: Box<crate::train::Checkpoint>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
