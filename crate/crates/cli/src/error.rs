use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Core(#[from] erank_core::Error),
    #[error("{0} matrices failed verification")]
    Verification(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Core(erank_core::Error::Divergence { .. }) => EXIT_DIVERGED,
            _ => EXIT_INPUT,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
