use eitphys::phantom::PhantomError;
use eitphys::sigproc::SigprocError;
use eitphys::training::TrainingError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Refused(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            _ => 1,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        match e {
            PhantomError::Config(_) | PhantomError::Params(_) => CliError::Config(e.to_string()),
            other => CliError::Other(other.into()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Config(_) => CliError::Config(e.to_string()),
            TrainingError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainingError::Phantom(p) => p.into(),
            other => CliError::Other(other.into()),
        }
    }
}

impl From<SigprocError> for CliError {
    fn from(e: SigprocError) -> Self {
        CliError::Other(e.into())
    }
}
