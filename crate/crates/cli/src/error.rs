use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {field}: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("missing dependency: {0} (run the stage that produces it first)")]
    MissingDependency(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 config, 3 missing dependency, 4 data (including unreadable files).
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid { .. } => 2,
            CliError::MissingDependency(_) => 3,
            CliError::Data(_) | CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn data(e: impl std::fmt::Display) -> CliError {
        CliError::Data(e.to_string())
    }
}
