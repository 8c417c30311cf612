use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] ntk_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error(
        "dataset not found at {path}; run scripts/fetch_mnist.sh to download \
         the IDX files, or pass --synthetic to use the built-in fallback set"
    )]
    DatasetNotFound { path: PathBuf },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("nothing to emit: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
