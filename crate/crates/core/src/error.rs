use thiserror::Error;

/// Errors produced by the estimators, transforms and data loaders.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynergyError {
    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// `0 / 0`: the ratio has no meaningful value.
    #[error("undefined ratio: numerator and denominator are both zero")]
    UndefinedRatio,

    /// A metric or simulation configuration is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Fieller's set is not a bounded interval at the requested level.
    #[error("unbounded interval: denominator mean is not significantly different from zero")]
    UnboundedInterval,

    /// The fixed-effect design matrix does not have full column rank.
    #[error("rank-deficient design: {0}")]
    Rank(String),

    /// A data row failed to parse or validate. `row` is 1-based and counts
    /// data rows only (the header is row 0).
    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl SynergyError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        SynergyError::Domain(msg.into())
    }

    pub(crate) fn data(row: usize, msg: impl Into<String>) -> Self {
        SynergyError::Data { row, message: msg.into() }
    }
}

impl From<std::io::Error> for SynergyError {
    fn from(e: std::io::Error) -> Self {
        SynergyError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SynergyError>;
