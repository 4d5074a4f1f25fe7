use std::path::PathBuf;
use std::process::ExitCode;

use dnsquant_core::Error as CoreError;

/// Failures surfaced by the command line, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Argument(String),
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: CoreError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    pub fn code(&self) -> u8 {
        match self {
            Self::Argument(_) => 2,
            Self::Data { source, .. } if is_argument_error(source) => 2,
            Self::Data { .. } | Self::Io { .. } | Self::Format(_) => 3,
            Self::Internal(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

fn is_argument_error(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::InvalidConfig(_) | CoreError::GroupSize { .. } | CoreError::InvalidProfile(_)
    )
}

/// Attaches a context label (usually a layer or file name) to core errors.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> CliResult<T>;
}

impl<T> Context<T> for Result<T, CoreError> {
    fn context(self, what: impl Into<String>) -> CliResult<T> {
        self.map_err(|source| CliError::Data {
            context: what.into(),
            source,
        })
    }
}
