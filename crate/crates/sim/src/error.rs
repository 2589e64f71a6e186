use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario config: {0}")]
    Config(String),

    #[error("scenario parse: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("trajectory length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },

    #[error("frame {frame} has no ground-truth counterpart")]
    Misaligned { frame: u64 },

    #[error(transparent)]
    Core(#[from] tembo_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
