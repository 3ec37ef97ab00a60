//! Error types shared by the core modules.

use alloc::string::String;

/// Errors produced by the core numeric operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An input vector does not match the shape the network expects.
    #[error("input shape mismatch: expected {expected}, got {got}")]
    InputShape { expected: usize, got: usize },
    /// Two parameter vectors with different layouts were combined.
    #[error("parameter layout mismatch: {a} vs {b} values")]
    LayoutMismatch { a: usize, b: usize },
    /// A forward or backward pass produced a non-finite value.
    #[error("numeric overflow: non-finite value in {context}")]
    NumericOverflow { context: &'static str },
    /// A class id is outside `0..class_count`.
    #[error("class id {class} out of range (class count {class_count})")]
    ClassOutOfRange { class: usize, class_count: usize },
    /// An operation that needs at least one element received none.
    #[error("empty input: {context}")]
    EmptyInput { context: &'static str },
    /// The evaluation set holds no samples of the requested class.
    #[error("no samples of class {class} in the evaluation set")]
    EmptyClass { class: usize },
    /// A sample id does not exist in the dataset.
    #[error("unknown sample id {id}")]
    UnknownSampleId { id: u64 },
    /// Invalid network or training configuration.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Training produced a non-finite loss.
    #[error("training diverged: non-finite loss in epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    /// Two gradient-sum records with different provenance were merged.
    #[error("cache consistency: {0}")]
    CacheConsistency(String),
    /// Fewer regression samples than the minimum of two survived filtering.
    #[error("insufficient data: {got} samples after outlier removal, need at least 2")]
    InsufficientData { got: usize },
    /// All effect values are identical, so no slope can be fitted.
    #[error("degenerate regressor: effect values have zero variance")]
    DegenerateRegressor,
}

pub type Result<T> = core::result::Result<T, Error>;
