use thiserror::Error;
use twp_core::analysis::AnalysisError;
use twp_core::distfit::DistError;
use twp_core::simnet::SimError;
use twp_core::wire::LogStoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Malformed input: corrupt logs, bad CSV or config contents.
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            CliError::Runtime(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<LogStoreError> for CliError {
    fn from(e: LogStoreError) -> Self {
        match e {
            LogStoreError::Io { .. } => CliError::Runtime(e.to_string()),
            LogStoreError::Corrupt { .. } | LogStoreError::BadName(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Store(s) => s.into(),
            AnalysisError::Csv(c) => c.into(),
            AnalysisError::Io(i) => i.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Parse(_) | SimError::Invalid(_) => CliError::Data(e.to_string()),
            SimError::Store(s) => s.into(),
            SimError::Wire(_) | SimError::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<DistError> for CliError {
    fn from(e: DistError) -> Self {
        match e {
            DistError::UnknownFamily(_) | DistError::BadParams(_) | DistError::BadFraction(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}
