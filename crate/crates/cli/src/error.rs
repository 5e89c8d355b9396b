use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Schema or value error in the run configuration, with the field path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing upstream artifact {0} (run the stage that writes it first)")]
    MissingArtifact(PathBuf),
    #[error("artifact {artifact} belongs to env hash {found}, current config has {expected}")]
    EnvMismatch {
        artifact: PathBuf,
        expected: String,
        found: String,
    },
    #[error("output directory {0} is locked by another run (delete .lock if it is stale)")]
    Locked(PathBuf),
    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] kestenlab::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn config_err(path: impl Into<String>, message: impl ToString) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
