use thiserror::Error;

/// Failures raised by the numerical solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("solver did not converge after {iterations} iterations (last change {last_change:.3e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("KKT conditions violated at exit: worst violation {violation:.3e} exceeds {tolerance:.3e}")]
    KktViolation { violation: f64, tolerance: f64 },

    #[error("quadratic form is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("tau = {tau:.4e} is infeasible for target {target}: {reason}")]
    InfeasibleTau { tau: f64, target: usize, reason: String },

    #[error("invalid solver input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Glm(#[from] GlmError),
}

/// Failures in link evaluation, data handling and sample splitting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("second derivative of the link is {weight:.3e} at theta = {theta:.3e}, below the floor {floor:.0e}")]
    WeightUnderflow { theta: f64, weight: f64, floor: f64 },

    #[error("link evaluated at non-finite theta = {0}")]
    Domain(f64),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),
}

/// Failures in message framing, transport and protocol orchestration.
#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad magic bytes {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("frame truncated: needed {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("checksum mismatch: header says {expected:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { expected: u64, computed: u64 },

    #[error("protocol version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("payload does not match header dimensions: {0}")]
    Dimension(String),

    #[error("unexpected message: {0}")]
    Unexpected(String),

    #[error("slot {0} already holds a message")]
    SlotOccupied(String),

    #[error("no message in slot {0}")]
    Missing(String),

    #[error("node failure at study {study:?}, fold {fold}: {source}")]
    NodeFailure {
        study: Option<usize>,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Failures in testing and tuning.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("need at least {needed} hypotheses, got {got}")]
    InsufficientHypotheses { needed: usize, got: usize },

    #[error("estimated variance for coordinate {coordinate} in study {study} is not positive ({value:.3e})")]
    DegenerateVariance { coordinate: usize, study: usize, value: f64 },

    #[error("truth sets overlap at index {0}")]
    OverlappingTruth(usize),

    #[error("rejected index {0} is neither null nor alternative")]
    UnknownIndex(usize),

    #[error("tuning failed: {0}")]
    Tuning(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Glm(#[from] GlmError),

    #[error(transparent)]
    Solver(#[from] SolverError),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error(transparent)]
    Inference(#[from] InferenceError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("output error: {0}")]
    Output(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
