use std::path::PathBuf;

use gridcast_core::CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("run directory {0} already exists (pass --force to overwrite)")]
    RunExists(PathBuf),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("plot: {0}")]
    Plot(String),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable class printed by the CLI.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Core(e) => match e {
                CoreError::InvalidConfig(_)
                | CoreError::UnknownKind { .. }
                | CoreError::Divisibility { .. }
                | CoreError::PaddingTooLarge { .. }
                | CoreError::NeighborhoodTooLarge { .. }
                | CoreError::LatticeTooCoarse { .. }
                | CoreError::NoMaskedChannels { .. } => "config",
                CoreError::Divergence { .. } => "divergence",
                CoreError::NothingLoaded => "checkpoint",
                _ => "data",
            },
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::RunExists(_) => "run_exists",
            Error::Schema(_) => "schema",
            Error::Plot(_) => "plot",
            Error::Usage(_) => "usage",
        }
    }
}
