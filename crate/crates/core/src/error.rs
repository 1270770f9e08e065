use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// No weight shift keeps layer `layer` inside int16 storage and int32
    /// accumulation.
    #[error("layer {layer}: no feasible weight shift ({reason})")]
    Infeasible { layer: usize, reason: String },

    /// Quantized shifts do not chain into a consistent scale sequence.
    #[error("quantized network bookkeeping inconsistent: {0}")]
    Bookkeeping(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors raised while decoding one of the binary containers.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },

    #[error("truncated stream while reading {section}")]
    Truncated { section: String },

    #[error("truncated stream in layer {layer} ({part})")]
    TruncatedLayer { layer: usize, part: &'static str },

    #[error("truncated stream: header declares {declared} records, {present} present")]
    TruncatedRecords { declared: usize, present: usize },

    #[error("inconsistent dimensions: {0}")]
    Dimensions(String),

    #[error("invalid field value: {0}")]
    InvalidValue(String),
}
