use thiserror::Error;

/// Everything that can go wrong inside the engine.
#[derive(Debug, Error)]
pub enum SgfmError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical instability at step {step}: {detail}")]
    Instability { step: usize, detail: String },
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergentLoss { epoch: usize },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SgfmError {
    /// Process exit code used by the CLI: 3 for numerical blow-ups, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            SgfmError::Instability { .. } | SgfmError::DivergentLoss { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, SgfmError>;
