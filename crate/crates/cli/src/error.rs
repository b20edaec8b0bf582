use perpscale::affinity::AffinityError;
use perpscale::metrics::MetricsError;
use perpscale::pipeline::PipelineError;
use perpscale::scaling::ScalingError;
use perpscale::{DatasetError, EmbeddingError, OptimizerError};
use thiserror::Error;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Budget(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Data(_) => 3,
            Self::Divergence(_) => 4,
            Self::Budget(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::RateOutOfRange(_)
            | DatasetError::RatesNotDescending
            | DatasetError::NoRates
            | DatasetError::SampleTooSmall { .. } => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<AffinityError> for CliError {
    fn from(e: AffinityError) -> Self {
        match e {
            AffinityError::MemoryBudget { .. } => Self::Budget(e.to_string()),
            AffinityError::PerplexityOutOfRange { .. } | AffinityError::NeighborCount { .. } => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Divergence { .. } => Self::Divergence(e.to_string()),
            OptimizerError::InvalidConfig(_) | OptimizerError::UnsupportedDimension(_) => Self::Usage(e.to_string()),
            OptimizerError::Affinity(inner) => inner.into(),
            OptimizerError::Embedding(inner) => inner.into(),
            OptimizerError::IdMismatch => Self::Data(e.to_string()),
        }
    }
}

impl From<ScalingError> for CliError {
    fn from(e: ScalingError) -> Self {
        match e {
            ScalingError::Affinity(inner) => inner.into(),
            ScalingError::Dataset(inner) => inner.into(),
            ScalingError::NotSubset(_) => Self::Data(e.to_string()),
            _ => Self::Usage(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Dataset(inner) => inner.into(),
            PipelineError::Optimizer(inner) => inner.into(),
            _ => Self::Usage(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::Data(e.to_string())
    }
}
