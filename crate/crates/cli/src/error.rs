use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Core(#[from] szgan_core::Error),
}

impl CliError {
    /// 2 config, 3 data, 4 training divergence, 5 missing artifact.
    pub fn exit_code(&self) -> i32 {
        use szgan_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::MissingArtifact(_) => 5,
            CliError::Core(e) => match e {
                E::Config(_) | E::Json(_) => 2,
                E::Divergence { .. } => 4,
                _ => 3,
            },
        }
    }

    /// Prefixes a data-level message with the patient it concerns.
    pub fn for_patient(patient: &str, e: szgan_core::Error) -> CliError {
        match e {
            szgan_core::Error::Divergence { .. } => CliError::Divergence(format!("patient {patient}: {e}")),
            szgan_core::Error::MissingChannels(_) | szgan_core::Error::Config(_) => {
                CliError::Config(format!("patient {patient}: {e}"))
            }
            other => CliError::Data(format!("patient {patient}: {other}")),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
