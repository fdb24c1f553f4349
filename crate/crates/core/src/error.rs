use thiserror::Error;

/// Errors raised by the metric head and its tooling.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdaError {
    #[error("vector norm {norm:e} is below the degenerate threshold")]
    DegenerateVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("class {0} has no support entries")]
    EmptyClass(usize),

    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("class {class} has {actual} support entries, strict protocol requires {expected}")]
    ShotCountMismatch {
        class: usize,
        expected: usize,
        actual: usize,
    },

    #[error("slot {slot} of class {class} is not unit norm (norm {norm})")]
    NotUnitNorm { class: usize, slot: usize, norm: f64 },

    #[error("input vector {index} is not unit norm (norm {norm})")]
    NotUnitInput { index: usize, norm: f64 },

    #[error("prototype memory is frozen; updates are rejected")]
    MemoryFrozen,

    #[error("inference requires a frozen prototype memory")]
    MemoryNotFrozen,

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("momentum must lie in [0, 1), got {0}")]
    InvalidMomentum(f64),

    #[error("use_align is set but no aligner parameters were supplied")]
    AlignerMissing,

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty query set")]
    EmptyQuery,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },
}

impl PdaError {
    pub(crate) fn dims(what: &'static str, expected: usize, actual: usize) -> Self {
        PdaError::DimensionMismatch {
            what,
            expected,
            actual,
        }
    }

    /// Whether the error stems from shapes or data rather than numerics or config.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            PdaError::DimensionMismatch { .. }
                | PdaError::Empty(_)
                | PdaError::EmptyClass(_)
                | PdaError::ClassOutOfRange { .. }
                | PdaError::ShotCountMismatch { .. }
                | PdaError::EmptyBatch
                | PdaError::EmptyQuery
                | PdaError::Format { .. }
                | PdaError::MemoryFrozen
                | PdaError::MemoryNotFrozen
                | PdaError::AlignerMissing
        )
    }

    /// Whether the error is a numerical failure (degenerate norms, NaN, bad scalars).
    pub fn is_numeric_error(&self) -> bool {
        matches!(
            self,
            PdaError::DegenerateVector { .. }
                | PdaError::NonFinite(_)
                | PdaError::NotUnitNorm { .. }
                | PdaError::NotUnitInput { .. }
                | PdaError::NonPositiveTemperature(_)
                | PdaError::InvalidMomentum(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, PdaError>;
