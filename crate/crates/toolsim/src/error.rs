use std::io;
use std::path::PathBuf;

use thiserror::Error;
use toolsim_core::curriculum::ConfigError;
use toolsim_core::prompt::PromptError;
use toolsim_core::tools::RepositoryError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("tool repository: {0}")]
    Repository(RepositoryError),
    #[error("templates: {0}")]
    Prompt(#[from] PromptError),
    #[error("curriculum: {0}")]
    Curriculum(ConfigError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, detail: impl ToString) -> Self {
        Error::Parse { path: path.into(), detail: detail.to_string() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
