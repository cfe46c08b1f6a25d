//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed trace header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },

    #[error("dimension mismatch at layer {layer}, head {head}, byte {offset}: {reason}")]
    DimensionMismatch {
        layer: usize,
        head: usize,
        offset: usize,
        reason: String,
    },

    #[error("non-finite value in layer {layer}, head {head}, {tensor} element {offset}")]
    NonFiniteValue {
        layer: usize,
        head: usize,
        tensor: &'static str,
        offset: usize,
    },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("KV memory size overflows the address space")]
    OverflowExceedsAddressSpace,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("retain fraction {0} outside (0, 1]")]
    InvalidFraction(f64),

    #[error("layer {layer} out of range for a trace with {num_layers} layers")]
    LayerOutOfRange { layer: usize, num_layers: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("bit-length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("bucket count must be at least 1")]
    ZeroBuckets,

    #[error("bucket assignment inconsistent with fingerprints: {0}")]
    InconsistentAssignment(String),

    #[error("k = {k} exceeds the number of points ({points})")]
    KTooLarge { k: usize, points: usize },

    #[error("sinks ({sinks}) + recents ({recents}) exceed sequence length {seq_len}")]
    BudgetExceedsSequence {
        sinks: usize,
        recents: usize,
        seq_len: usize,
    },

    #[error("observation window {window} invalid for sequence length {seq_len}")]
    WindowTooLarge { window: usize, seq_len: usize },

    #[error("pooling width {0} must be odd and at least 1")]
    InvalidPoolWidth(usize),

    #[error("budget too small: {0}")]
    BudgetTooSmall(String),

    #[error("page has no tokens")]
    EmptyPage,

    #[error("pages do not partition the sequence: {0}")]
    InvalidPartition(String),

    #[error("index {index} out of range for sequence length {seq_len}")]
    IndexOutOfRange { index: usize, seq_len: usize },

    #[error("decision for layer {0} retains no tokens")]
    EmptyDecision(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for errors caused by flags, config files or mismatched inputs
    /// rather than by a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InvalidFraction(_)
                | Error::LayerOutOfRange { .. }
                | Error::KTooLarge { .. }
                | Error::BudgetExceedsSequence { .. }
                | Error::WindowTooLarge { .. }
                | Error::InvalidPoolWidth(_)
                | Error::BudgetTooSmall(_)
                | Error::IndexOutOfRange { .. }
                | Error::EmptyDecision(_)
                | Error::InvalidConfig(_)
        )
    }
}
