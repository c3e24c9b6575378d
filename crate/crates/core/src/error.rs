use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid record on line {line}: {reason}")]
    InvalidRecord { line: usize, reason: String },

    #[error("offset standard deviation is zero; dataset cannot be normalized")]
    ZeroVariance,

    #[error("sequence of length {len} exceeds n_max = {n_max}")]
    TooLong { len: usize, n_max: usize },

    #[error("malformed pen state at index {index}: {reason}")]
    MalformedPenState { index: usize, reason: String },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at iteration {iteration}: {source}")]
    Diverged {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("loss is not deterministic under a fixed seed ({first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("unknown parameter {0:?}")]
    UnknownParam(String),

    #[error("all sketches are degenerate (no on-paper points)")]
    AllDegenerate,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
