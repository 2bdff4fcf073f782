use std::path::PathBuf;

use simreweight_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 2 configuration, 3 i/o or malformed input, 4 numerical divergence,
    /// 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } => 3,
            Self::Failed(_) => 1,
            Self::Core(e) => match e {
                Error::InvalidConfig(_) | Error::InvalidRange { .. } | Error::WindowTooLong { .. } => 2,
                Error::Io { .. } | Error::Format { .. } => 3,
                Error::Diverged { .. } | Error::NonFiniteValue(_) | Error::NonFiniteGradient(_) => 4,
                _ => 1,
            },
        }
    }
}
