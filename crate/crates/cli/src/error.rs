use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] eegrisk::Error),

    #[error("{0}")]
    Usage(String),

    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error(
        "hash mismatch for {}: {} records sha256 {expected}, file has {found}; rerun the producing stage",
        path.display(),
        manifest.display()
    )]
    HashMismatch {
        path: PathBuf,
        manifest: PathBuf,
        expected: String,
        found: String,
    },
}

impl CliError {
    /// 1 usage, 2 data error. Panics map to 3 in `main`.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(eegrisk::Error::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
