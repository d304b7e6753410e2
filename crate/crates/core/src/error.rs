use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PruneError {
    #[error("approx_dot needs at least one operand pair")]
    EmptyInput,
    #[error("threshold must be at least 1 MSB unit")]
    ZeroThreshold,
    #[error("tolerance fraction {0} is outside (0, 1)")]
    FractionOutOfRange(f64),
    #[error("cannot parse threshold {0:?}; expected f:<fraction> or t:<integer>")]
    BadSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value {value} at index {index} is outside the +/-2^30 headroom range")]
    OutOfRange { index: usize, value: i64 },
    #[error("accumulator overflow: {value} does not fit a signed 32-bit register")]
    AccumulatorOverflow { value: i64 },
    #[error("pooling needs even spatial dimensions, got {height}x{width}")]
    OddDimensions { height: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccelError {
    #[error("accelerator is busy (state {0})")]
    Busy(String),
    #[error("no run in progress")]
    NotRunning,
    #[error("outputs are only readable in DONE (state {0})")]
    NotDone(String),
    #[error("no kernel loaded")]
    NoKernel,
    #[error("request size {0} words; the window is exactly 16")]
    BadRequestSize(u32),
    #[error("memory fault reading word address {0:#x}")]
    MemoryFault(u32),
    #[error("output y{index} = {value} overflows the 32-bit result register")]
    OutputOverflow { index: usize, value: i64 },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated {what}: need {needed} bytes, have {available}")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("label {value} at index {index} is not a digit")]
    LabelOutOfRange { index: usize, value: u8 },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("empty image set")]
    Empty,
    #[error("bad container magic {0:?}")]
    BadContainerMagic([u8; 4]),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("length mismatch in {what}: expected {expected} bytes, found {found}")]
    LengthMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate record name {0:?}")]
    DuplicateName(String),
    #[error("record name is not valid UTF-8")]
    BadName,
    #[error("missing record {0:?}")]
    MissingRecord(String),
    #[error("record {name:?}: {reason}")]
    BadRecord { name: String, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-level error for operations that cross module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Accel(#[from] AccelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("training did not converge: accuracy {accuracy:.4} after {epochs} epochs")]
    NonConvergence { accuracy: f64, epochs: usize },
    #[error("invalid model: {0}")]
    Model(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
