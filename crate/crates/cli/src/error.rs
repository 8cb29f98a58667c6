use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Schema violation at a dotted field path such as `budget.b`.
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Core(#[from] proxsim_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown suite `{0}` (known: {known})", known = crate::suites::SUITE_NAMES.join(", "))]
    UnknownSuite(String),

    #[error("plot: {0}")]
    Plot(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn config_err(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_string(),
        msg: msg.into(),
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
