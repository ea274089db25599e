use std::path::PathBuf;

/// Failures of the experiment runner. Configuration problems are detected
/// before any simulation starts.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),

    #[error("simulation failed: {0}")]
    Runtime(#[from] spinpop_core::Error),

    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Output { .. } => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Data { path: PathBuf, line: usize, reason: String },
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.into(), reason: reason.into() }
    }

    /// Attach a config section to a validation failure from the core crate.
    pub fn from_core(section: &str, err: spinpop_core::Error) -> Self {
        match err {
            spinpop_core::Error::InvalidParameter { name, reason } => Self::invalid(format!("{section}.{name}"), reason),
            other => Self::invalid(section, other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
