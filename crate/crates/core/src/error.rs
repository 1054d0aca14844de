use alloc::string::String;

use crate::model::BrandId;

/// Errors raised by the core pipeline, its math and its provider contracts.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{provider} provider unavailable: {reason}")]
    ProviderUnavailable {
        provider: &'static str,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,

    #[error("non-finite embedding value at index {0}")]
    NonFinite(usize),

    #[error("style ingestion needs at least one exemplar")]
    EmptyExemplars,

    #[error("malformed VLM output: {0}")]
    MalformedVlmOutput(String),

    #[error("VLM reply references a bias that was not requested: {0}")]
    BiasMismatch(String),

    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),

    #[error("modifier source bias `{0}` is not part of the cached bias set")]
    SourceBiasMismatch(BrandId),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn unavailable(provider: &'static str, reason: impl Into<String>) -> Self {
        Error::ProviderUnavailable {
            provider,
            reason: reason.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that originate outside the process (network, remote model).
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            Error::ProviderUnavailable { .. }
                | Error::MalformedVlmOutput(_)
                | Error::BiasMismatch(_)
        )
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
