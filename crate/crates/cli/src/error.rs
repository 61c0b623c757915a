use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] sketch2cad_core::Error),

    #[error(transparent)]
    Nets(#[from] sketch2cad_nets::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 config, 3 I/O, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use sketch2cad_core::Error as C;
        use sketch2cad_nets::Error as N;
        let core = |e: &C| match e {
            C::Io { .. } | C::Corpus { .. } => 3,
            _ => 2,
        };
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => core(e),
            CliError::Nets(N::Core(e)) => core(e),
            CliError::Nets(N::Io { .. }) => 3,
            CliError::Nets(N::Divergence { .. }) => 4,
            CliError::Nets(_) => 2,
        }
    }
}
