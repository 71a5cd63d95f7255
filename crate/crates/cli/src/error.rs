//! Run failures and their exit codes.

use ontolearn::corpus::CorpusError;
use ontolearn::embedstore::StoreError;
use ontolearn::eval::EvalError;
use ontolearn::fewshot::FewshotError;
use ontolearn::taxo::TaxoError;
use ontolearn::zeroshot::ZeroShotError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("service error: {0}")]
    Service(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 1,
            RunError::Data(_) => 2,
            RunError::Service(_) => 3,
        }
    }

    /// Data error prefixed with the file it came from.
    pub fn data_in(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        RunError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<CorpusError> for RunError {
    fn from(e: CorpusError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<StoreError> for RunError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Service(s) => RunError::Service(s.to_string()),
            other => RunError::Data(other.to_string()),
        }
    }
}

impl From<FewshotError> for RunError {
    fn from(e: FewshotError) -> Self {
        match e {
            FewshotError::Service(s) => RunError::Service(s.to_string()),
            other => RunError::Data(other.to_string()),
        }
    }
}

impl From<ZeroShotError> for RunError {
    fn from(e: ZeroShotError) -> Self {
        match e {
            ZeroShotError::Store(s) => s.into(),
            ZeroShotError::BadTemplate(_) | ZeroShotError::MissingDomain(_) | ZeroShotError::BadTemperature => {
                RunError::Config(e.to_string())
            }
            other => RunError::Data(other.to_string()),
        }
    }
}

impl From<TaxoError> for RunError {
    fn from(e: TaxoError) -> Self {
        match e {
            TaxoError::InvalidConfig(m) => RunError::Config(m),
            TaxoError::BadHeads { .. } | TaxoError::NoConfigs => RunError::Config(e.to_string()),
            other => RunError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for RunError {
    fn from(e: EvalError) -> Self {
        RunError::Data(e.to_string())
    }
}
