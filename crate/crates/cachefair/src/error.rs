use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] cachefair_core::Error),

    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("{path}: {cause}")]
    Parse { path: PathBuf, cause: serde_json::Error },

    #[error("{0}")]
    Config(String),

    /// A run broke an invariant every experiment run must keep.
    #[error("run {run} (seed {seed}): {what}")]
    Run { run: usize, seed: u64, what: String },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), cause: source }
    }
}
